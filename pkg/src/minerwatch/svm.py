"""Soft-margin SVM trained by sequential minimal optimization.

The binary solver optimizes the dual one working pair at a time with the
usual clipping rules and a second-choice heuristic on the error cache, so
the dual objective never decreases.  Multi-class goes through one-vs-one
voting with ties resolved toward the lowest class index.  Convergence is
declared when a full sweep finds no pair violating the KKT conditions
beyond the tolerance; hitting the pass cap instead returns the best
iterate with ``converged`` set to False.
"""
from __future__ import annotations

from itertools import combinations
from typing import Callable

import numpy as np

TOL = 1e-3


def kernel_matrix(kind: str, gamma: float, degree: int, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if kind == "rbf":
        aa = np.sum(A * A, axis=1)[:, None]
        bb = np.sum(B * B, axis=1)[None, :]
        sq = np.maximum(aa + bb - 2.0 * (A @ B.T), 0.0)
        return np.exp(-gamma * sq)
    if kind == "poly":
        return (gamma * (A @ B.T)) ** degree
    if kind == "sigmoid":
        return np.tanh(gamma * (A @ B.T))
    raise ValueError(f"unknown kernel {kind!r}")


class BinarySMO:
    """Two-class solver; labels must be -1/+1."""

    def __init__(self, C: float, kernel: str, gamma: float, degree: int,
                 tol: float = TOL, max_passes: int = 200):
        self.C = C
        self.kernel = kernel
        self.gamma = gamma
        self.degree = degree
        self.tol = tol
        self.max_passes = max_passes
        self.alpha: np.ndarray | None = None
        self.b = 0.0
        self.converged = False

    def _objective(self, K: np.ndarray, y: np.ndarray) -> float:
        ay = self.alpha * y
        return float(self.alpha.sum() - 0.5 * ay @ K @ ay)

    def fit(self, X: np.ndarray, y: np.ndarray, rng: np.random.Generator,
            on_pass: Callable[[float], None] | None = None) -> "BinarySMO":
        n = X.shape[0]
        K = kernel_matrix(self.kernel, self.gamma, self.degree, X, X)
        self.X = X
        self.y = y.astype(np.float64)
        self.alpha = np.zeros(n)
        self.b = 0.0
        errors = -self.y.copy()  # f(x) = 0 initially

        def take_step(i: int, j: int) -> bool:
            nonlocal errors
            if i == j:
                return False
            ai_old, aj_old = self.alpha[i], self.alpha[j]
            yi, yj = self.y[i], self.y[j]
            Ei, Ej = errors[i], errors[j]
            if yi != yj:
                L, H = max(0.0, aj_old - ai_old), min(self.C, self.C + aj_old - ai_old)
            else:
                L, H = max(0.0, ai_old + aj_old - self.C), min(self.C, ai_old + aj_old)
            if L >= H:
                return False
            eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
            if eta >= 0:
                return False
            aj = aj_old - yj * (Ei - Ej) / eta
            aj = min(max(aj, L), H)
            if abs(aj - aj_old) < 1e-12 * (aj + aj_old + 1e-12):
                return False
            ai = ai_old + yi * yj * (aj_old - aj)
            b1 = self.b - Ei - yi * (ai - ai_old) * K[i, i] - yj * (aj - aj_old) * K[i, j]
            b2 = self.b - Ej - yi * (ai - ai_old) * K[i, j] - yj * (aj - aj_old) * K[j, j]
            if 0.0 < ai < self.C:
                new_b = b1
            elif 0.0 < aj < self.C:
                new_b = b2
            else:
                new_b = 0.5 * (b1 + b2)
            delta = yi * (ai - ai_old) * K[i] + yj * (aj - aj_old) * K[j] + (new_b - self.b)
            errors += delta
            self.alpha[i], self.alpha[j] = ai, aj
            self.b = new_b
            return True

        def second_choice(i: int) -> int:
            nonbound = np.flatnonzero((self.alpha > 0) & (self.alpha < self.C))
            pool = nonbound if nonbound.size > 1 else np.arange(n)
            j = int(pool[np.argmax(np.abs(errors[i] - errors[pool]))])
            return j if j != i else int(rng.integers(0, n))

        examine_all = True
        for _ in range(self.max_passes):
            changed = 0
            candidates = np.arange(n) if examine_all else \
                np.flatnonzero((self.alpha > 0) & (self.alpha < self.C))
            for i in candidates:
                r = errors[i] * self.y[i]
                if (r < -self.tol and self.alpha[i] < self.C) or (r > self.tol and self.alpha[i] > 0):
                    if take_step(i, second_choice(i)):
                        changed += 1
            if on_pass is not None:
                on_pass(self._objective(K, self.y))
            if examine_all:
                if changed == 0:
                    self.converged = True
                    break
                examine_all = False
            elif changed == 0:
                examine_all = True
        support = self.alpha > 1e-12
        self.support_X = X[support]
        self.support_ay = (self.alpha * self.y)[support]
        return self

    def decision(self, X: np.ndarray) -> np.ndarray:
        K = kernel_matrix(self.kernel, self.gamma, self.degree, X, self.support_X)
        return K @ self.support_ay + self.b


class SVC:
    """One-vs-one multi-class wrapper over the binary SMO solver."""

    def __init__(self, C: float = 1.0, kernel: str = "rbf", gamma: float | str = "auto",
                 degree: int = 3, random_state: int = 10, max_passes: int = 200):
        self.C = C
        self.kernel = kernel
        self.gamma = gamma
        self.degree = degree
        self.random_state = random_state
        self.max_passes = max_passes
        self.machines: dict[tuple[int, int], BinarySMO] = {}
        self.n_classes_ = 0
        self.converged = True

    def _gamma_value(self, n_features: int) -> float:
        if self.gamma == "auto":
            return 1.0 / n_features
        return float(self.gamma)

    def fit(self, X: np.ndarray, y: np.ndarray) -> "SVC":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.intp)
        classes = np.unique(y)
        if classes.size < 2:
            raise ValueError("need at least 2 classes")
        self.n_classes_ = int(y.max()) + 1
        gamma = self._gamma_value(X.shape[1])
        self.machines = {}
        self.converged = True
        for a, b in combinations(sorted(int(c) for c in classes), 2):
            keep = (y == a) | (y == b)
            Xp = X[keep]
            yp = np.where(y[keep] == a, 1.0, -1.0)  # +1 means the lower class index
            smo = BinarySMO(self.C, self.kernel, gamma, self.degree, max_passes=self.max_passes)
            rng = np.random.default_rng(np.random.SeedSequence((self.random_state, a, b)))
            smo.fit(Xp, yp, rng)
            self.converged = self.converged and smo.converged
            self.machines[(a, b)] = smo
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        votes = np.zeros((X.shape[0], self.n_classes_))
        for (a, b), smo in self.machines.items():
            decision = smo.decision(X)
            votes[:, a] += decision > 0
            votes[:, b] += decision <= 0
        return np.argmax(votes, axis=1)
