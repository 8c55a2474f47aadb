"""Per-operator decision policies and the strategy registry.

The engines own the protocol mechanics; a :class:`Strategy` only answers the
questions a party actually decides: whether to register, when to challenge,
whether to keep playing a round, and whether to perform the public duties
(stall cuts, NoAssertion, liveness broadcasts) that any honest party may do.

Strategies are named by short specs such as ``honest``, ``abstain``,
``stall_after_round:2`` or ``censor:0.5``.
"""

from __future__ import annotations

from typing import Callable, Protocol

from battlesim.ledger import Ledger, SimulationError


class UnknownStrategy(SimulationError):
    pass


class Verdicts(Protocol):
    """What a strategy may observe: the AVP verdict of a party's assertion."""

    def verdict(self, party: str, dispute: str | None = None) -> int: ...


# ── Built-in policies ────────────────────────────────────────


class Strategy:
    """Honest behaviour; subclasses override the decisions they change."""

    name = "honest"
    honest = True

    def spec(self) -> str:
        return self.name

    def registers(self, view: Verdicts, party: str) -> bool:
        return view.verdict(party) == 1

    def register_delay(self) -> int:
        return 0

    def enables(self, party: str, round_no: int) -> bool:
        return True

    def challenges(self, view: Verdicts, party: str, asserter: str, dispute: str, round_no: int) -> bool:
        return view.verdict(asserter, dispute) == 0

    def moves(self, party: str, round_no: int) -> bool:
        return True

    def duties(self, party: str) -> bool:
        return self.honest

    def assertion(self, party: str, base: str, dispute: str | None = None) -> str:
        return base

    def setup(self, ledger: Ledger, party: str, others: list[str]) -> None:
        pass

    def opens_and_abandons(self) -> bool:
        return False

    def __repr__(self) -> str:
        return f"<Strategy {self.spec()}>"


class Honest(Strategy):
    pass


class Abstain(Strategy):
    name = "abstain"
    honest = False

    def registers(self, view: Verdicts, party: str) -> bool:
        return False

    def enables(self, party: str, round_no: int) -> bool:
        return False

    def challenges(self, view, party, asserter, dispute, round_no) -> bool:
        return False

    def moves(self, party: str, round_no: int) -> bool:
        return False


class StallAfterRound(Strategy):
    """Plays honestly before round *r*, enters round *r*, opens its dispute, then goes silent."""

    name = "stall_after_round"
    honest = False

    def __init__(self, round_no: int = 1) -> None:
        if round_no < 1:
            raise UnknownStrategy("stall_after_round needs a round >= 1")
        self.round_no = round_no

    def spec(self) -> str:
        return f"{self.name}:{self.round_no}"

    def registers(self, view: Verdicts, party: str) -> bool:
        return True

    def enables(self, party: str, round_no: int) -> bool:
        return round_no <= self.round_no

    def challenges(self, view, party, asserter, dispute, round_no) -> bool:
        if round_no < self.round_no:
            return super().challenges(view, party, asserter, dispute, round_no)
        return round_no == self.round_no

    def moves(self, party: str, round_no: int) -> bool:
        return round_no < self.round_no


class AlwaysChallenge(Strategy):
    name = "always_challenge"
    honest = False

    def registers(self, view: Verdicts, party: str) -> bool:
        return True

    def challenges(self, view, party, asserter, dispute, round_no) -> bool:
        return True

    def duties(self, party: str) -> bool:
        return False


class Equivocate(Strategy):
    """Binds a different forged assertion in every dispute it defends."""

    name = "equivocate"
    honest = False

    def registers(self, view: Verdicts, party: str) -> bool:
        return True

    def challenges(self, view, party, asserter, dispute, round_no) -> bool:
        return True

    def duties(self, party: str) -> bool:
        return False

    def assertion(self, party: str, base: str, dispute: str | None = None) -> str:
        return base if dispute is None else f"forged-{party}-{dispute}"


class LateRegister(Strategy):
    name = "late_register"
    honest = False

    def __init__(self, delay: int = 2) -> None:
        if delay < 1:
            raise UnknownStrategy("late_register needs a delay of at least one period")
        self.delay = delay

    def spec(self) -> str:
        return f"{self.name}:{self.delay}"

    def registers(self, view: Verdicts, party: str) -> bool:
        return True

    def register_delay(self) -> int:
        return self.delay


class CensorBudget(Strategy):
    """Honest play while delaying every other party's broadcasts by a fraction of a period."""

    name = "censor"
    honest = False

    def __init__(self, fraction: float = 0.5) -> None:
        if not 0.0 <= fraction < 1.0:
            raise UnknownStrategy("censorship must stay below one timelock period")
        self.fraction = fraction

    def spec(self) -> str:
        return f"{self.name}:{self.fraction}"

    def setup(self, ledger: Ledger, party: str, others: list[str]) -> None:
        for other in others:
            if other != party:
                ledger.censor(other, self.fraction)


class OpenAndAbandon(Abstain):
    name = "open_and_abandon"

    def opens_and_abandons(self) -> bool:
        return True


# ── Registry ─────────────────────────────────────────────────

StrategyFactory = Callable[..., Strategy]


class StrategyRegistry:
    """Registry for custom strategies.

    Registered factories take priority over the built-in ones::

        from battlesim.strategy import registry

        @registry.register("grudge")
        class Grudge(Strategy):
            ...
    """

    def __init__(self) -> None:
        self._factories: dict[str, StrategyFactory] = {}

    def register(self, name: str) -> Callable[[StrategyFactory], StrategyFactory]:
        def decorator(factory: StrategyFactory) -> StrategyFactory:
            self._factories[name] = factory
            return factory

        return decorator

    def register_factory(self, name: str, factory: StrategyFactory) -> None:
        self._factories[name] = factory

    def lookup(self, name: str) -> StrategyFactory | None:
        return self._factories.get(name)

    @property
    def names(self) -> list[str]:
        return list(self._factories)

    def clear(self) -> None:
        """Remove all registered strategies. Mainly for testing."""
        self._factories.clear()


registry = StrategyRegistry()

_BUILTIN_STRATEGIES: dict[str, StrategyFactory] = {
    "honest": Honest,
    "abstain": Abstain,
    "stall_after_round": StallAfterRound,
    "always_challenge": AlwaysChallenge,
    "equivocate": Equivocate,
    "late_register": LateRegister,
    "censor": CensorBudget,
    "open_and_abandon": OpenAndAbandon,
}


def builtin_names() -> list[str]:
    return sorted(_BUILTIN_STRATEGIES)


def make_strategy(spec: str | Strategy) -> Strategy:
    """Build a strategy from ``name`` or ``name:argument``."""
    if isinstance(spec, Strategy):
        return spec
    name, _, arg = str(spec).strip().partition(":")
    factory = registry.lookup(name) or _BUILTIN_STRATEGIES.get(name)
    if factory is None:
        raise UnknownStrategy(f"unknown strategy {name!r}")
    if not arg:
        return factory()
    try:
        value: int | float = float(arg) if "." in arg else int(arg)
    except ValueError as e:
        raise UnknownStrategy(f"bad argument {arg!r} for strategy {name!r}") from e
    try:
        return factory(value)
    except TypeError as e:
        raise UnknownStrategy(f"strategy {name!r} takes no argument") from e

