from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from errors import ConfigError, ValidationError

VALIDATION_MODES: tuple[str, ...] = ("ensemble", "one_model", "real", "trpo_mean", "no_early_50", "no_early_5")
FIXED_BUDGETS: dict[str, int] = {"no_early_50": 50, "no_early_5": 5}


def improvement_ratio(returns_new, returns_old) -> float:
    """Fraction of models whose estimated return strictly improved."""
    new = np.asarray(returns_new, dtype=np.float64).reshape(-1)
    old = np.asarray(returns_old, dtype=np.float64).reshape(-1)
    if new.shape != old.shape:
        raise ValidationError(f"got {new.size} new returns but {old.size} old returns")
    if new.size == 0:
        raise ValidationError("improvement_ratio needs at least one model")
    return float(np.count_nonzero(new > old)) / new.size


@dataclass(frozen=True)
class ValidationConfig:
    mode: str = "ensemble"
    threshold: float = 0.7
    check_every: int = 5
    patience: int = 25

    def validate(self) -> "ValidationConfig":
        if self.mode not in VALIDATION_MODES:
            raise ConfigError(f"unknown validation mode '{self.mode}' (known: {', '.join(VALIDATION_MODES)})")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"validation threshold must be in [0, 1], got {self.threshold}")
        if self.check_every < 1 or self.patience < 0:
            raise ConfigError("check_every must be positive and patience non-negative")
        return self


@dataclass(frozen=True)
class ValidationVerdict:
    """Outcome of one gradient update.

    ``ratio`` is the value of the most recent check (0.0 before the first);
    ``checked`` tells whether a check ran on this update.
    """

    update_index: int
    ratio: float
    continue_flag: bool
    updates_since_last_pass: int
    checked: bool = False
    passed: bool = False


class ValidationController:
    """Early-stopping state machine for one inner optimization phase.

    The reference returns are those of the parameters at the last passing
    check and are only replaced when a check passes.
    """

    def __init__(self, config: ValidationConfig) -> None:
        self.config = config.validate()
        self.reset()

    def reset(self, old_returns=None, real_return: float | None = None, batch_return: float | None = None) -> None:
        self.update_index = 0
        self.last_pass_update = 0
        self.first_failing_update: int | None = None
        self.last_ratio = 0.0
        self.best_returns = None if old_returns is None else np.asarray(old_returns, dtype=np.float64).reshape(-1)
        self.best_real_return = real_return
        self.best_batch_return = batch_return
        self.stopped = False

    @property
    def mode(self) -> str:
        return self.config.mode

    @property
    def due(self) -> bool:
        """Whether the next call to ``check_and_update`` runs a check."""
        if self.mode in FIXED_BUDGETS:
            return False
        return (self.update_index + 1) % self.config.check_every == 0

    @property
    def needs_model_returns(self) -> bool:
        return self.mode in ("ensemble", "one_model")

    def _evaluate(self, new_returns, old_returns, real_return, batch_return) -> tuple[float, bool]:
        mode = self.mode
        if mode in ("ensemble", "one_model"):
            if new_returns is None:
                raise ValidationError(f"{mode} validation needs per-model return estimates")
            new = np.asarray(new_returns, dtype=np.float64).reshape(-1)
            old = self.best_returns if old_returns is None else np.asarray(old_returns, dtype=np.float64).reshape(-1)
            if old is None:
                raise ValidationError(f"{mode} validation has no reference returns; call reset first")
            if mode == "one_model":
                new, old = new[:1], old[:1]
            ratio = improvement_ratio(new, old)
            passed = ratio >= self.config.threshold if mode == "ensemble" else ratio == 1.0
            if passed:
                self.best_returns = new.copy()
            return ratio, passed
        if mode == "real":
            if real_return is None:
                raise ValidationError("real validation mode needs a real-return feed")
            if self.best_real_return is None:
                raise ValidationError("real validation has no reference return; call reset first")
            passed = real_return > self.best_real_return
            if passed:
                self.best_real_return = real_return
            return float(passed), passed
        if batch_return is None:
            raise ValidationError("trpo_mean validation needs the mean fictitious batch return")
        passed = self.best_batch_return is None or batch_return > self.best_batch_return
        if passed:
            self.best_batch_return = batch_return
        return float(passed), passed

    def check_and_update(
        self,
        new_returns=None,
        old_returns=None,
        real_return: float | None = None,
        batch_return: float | None = None,
    ) -> ValidationVerdict:
        if self.stopped:
            raise ValidationError("inner phase already stopped; call reset before further updates")
        checked = self.due
        self.update_index += 1
        update = self.update_index

        if self.mode in FIXED_BUDGETS:
            keep_going = update < FIXED_BUDGETS[self.mode]
            self.stopped = not keep_going
            return ValidationVerdict(update, self.last_ratio, keep_going, update - self.last_pass_update)

        passed = False
        if checked:
            self.last_ratio, passed = self._evaluate(new_returns, old_returns, real_return, batch_return)
            if passed:
                self.last_pass_update = update
                self.first_failing_update = None
            elif self.first_failing_update is None:
                self.first_failing_update = update

        exhausted = self.first_failing_update is not None and update - self.first_failing_update >= self.config.patience
        self.stopped = exhausted
        return ValidationVerdict(update, self.last_ratio, not exhausted, update - self.last_pass_update, checked, passed)
