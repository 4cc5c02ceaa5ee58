"""Helpers shared by both representations: predictions and exported formulas."""

from __future__ import annotations

import numpy as np

from . import gptrad, tree
from .fitness import nmse_fixed


def raw_output(solution, X: np.ndarray, sets: tree.SymbolSet) -> np.ndarray:
    if isinstance(solution.tree, gptrad.VariableTree):
        return gptrad.evaluate(solution.tree, X, sets)
    return tree.evaluate(solution.tree, X, sets)


def predict(solution, X: np.ndarray, sets: tree.SymbolSet) -> np.ndarray:
    """Model output including the linear scaling fitted on the training data."""
    a, b = solution.scale
    with np.errstate(all="ignore"):
        return a + b * raw_output(solution, X, sets)


def infix(solution, sets: tree.SymbolSet) -> str:
    if isinstance(solution.tree, gptrad.VariableTree):
        return gptrad.to_infix(solution.tree, sets)
    return tree.to_infix(solution.tree, sets)


def scaled_expression(solution, sets: tree.SymbolSet) -> str:
    """Infix formula with the training-set scaling folded in."""
    a, b = solution.scale
    return f"({tree.format_constant(a)} + ({tree.format_constant(b)} * {infix(solution, sets)}))"


def mse_fixed_scale(solution, X: np.ndarray, y: np.ndarray, sets: tree.SymbolSet) -> float:
    """MSE on (X, y) using the solution's stored scaling coefficients."""
    with np.errstate(all="ignore"):
        err = float(np.mean((np.asarray(y) - predict(solution, X, sets)) ** 2))
    return err if np.isfinite(err) else np.inf


def nmse_on(solution, X, y, sets: tree.SymbolSet) -> float:
    a, b = solution.scale
    return nmse_fixed(y, raw_output(solution, X, sets), a, b)
