"""Robot traders: Giveaway, Shaver, Sniper and Zero-Intelligence-Constrained.

Each trader works one assignment at a time and keeps at most one order on
the book. Buyers are described below; sellers mirror them.

* GVWY quotes its limit.
* SHVR improves the best same-side price by one tick, capped at the limit,
  and posts a stub quote at the system bound when its side is empty.
* ZIC quotes a uniform random price between the system bound and its limit.
* SNPR lurks until the assignment's remaining lifetime falls below
  ``lurk_fraction``, then acts as SHVR but lifts the opposite best when it
  is within the limit.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from enum import Enum
from typing import ClassVar, Dict, Optional, Type

from .book import DEFAULT_MAX_PRICE, MIN_PRICE, Side
from .marketdata import MarketDataSnapshot
from .scheduler import Assignment

log = logging.getLogger(__name__)


class Strategy(str, Enum):
    GVWY = "GVWY"
    SHVR = "SHVR"
    ZIC = "ZIC"
    SNPR = "SNPR"


class AccountingError(Exception):
    """A fill could not be attributed to the trader's live order."""


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class OrderProposal:
    trader_id: str
    side: Side
    price: int
    qty: int


@dataclass
class MarketView:
    snapshot: Optional[MarketDataSnapshot] = None
    recv_time: Optional[float] = None

    def best(self, side: Side) -> Optional[int]:
        if self.snapshot is None:
            return None
        level = self.snapshot.best_bid if side is Side.BID else self.snapshot.best_ask
        return None if level is None else level[0]


@dataclass
class LiveOrder:
    cl_ord_id: str
    price: int
    open_qty: int
    assignment: Assignment


def price_is_sane(side: Side, price: int, limit: int, min_price: int, max_price: int) -> bool:
    if not min_price <= price <= max_price:
        return False
    return price <= limit if side is Side.BID else price >= limit


class Trader:
    """Shared bookkeeping; subclasses implement :meth:`_price`."""

    strategy: ClassVar[Strategy]
    reacts_to_market: ClassVar[bool] = False

    def __init__(self, trader_id: str, side: Side, seed: int = 0,
                 min_price: int = MIN_PRICE, max_price: int = DEFAULT_MAX_PRICE):
        self.trader_id = trader_id
        self.side = side
        self.min_price = min_price
        self.max_price = max_price
        self.rng = random.Random(seed)
        self.assignment: Optional[Assignment] = None
        self.live: Optional[LiveOrder] = None
        self.pending_cancel: Optional[str] = None
        self.profit = 0
        self.n_trades = 0

    def __repr__(self) -> str:
        return f"<{self.strategy.value} {self.trader_id} {self.side.value} profit={self.profit}>"

    @property
    def busy(self) -> bool:
        """True while awaiting a cancel acknowledgement."""
        return self.pending_cancel is not None

    def quote(self, view: MarketView, now: float) -> Optional[OrderProposal]:
        a = self.assignment
        if a is None or self.busy:
            return None
        if (self.side is Side.BID and a.limit < self.min_price) or \
                (self.side is Side.ASK and a.limit > self.max_price):
            log.warning("%s: limit %d outside system bounds, not quoting", self.trader_id, a.limit)
            return None
        price = self._price(a, view, now)
        if price is None:
            return None
        if self.live is not None and self.live.price == price and self.live.assignment is a:
            return None
        return OrderProposal(self.trader_id, self.side, price, a.qty)

    def _price(self, a: Assignment, view: MarketView, now: float) -> Optional[int]:
        raise NotImplementedError

    def next_wake(self, now: float) -> Optional[float]:
        return None

    def on_assignment(self, a: Assignment) -> Optional[str]:
        """Install ``a``; returns the ClOrdID to cancel, if any."""
        if a.side is not self.side:
            raise ConfigurationError(f"{self.trader_id} trades {self.side.value}, got a {a.side.value} assignment")
        self.assignment = a
        if self.live is not None and self.pending_cancel is None:
            self.pending_cancel = self.live.cl_ord_id
            return self.live.cl_ord_id
        return None

    def request_cancel(self) -> Optional[str]:
        if self.live is None or self.pending_cancel is not None:
            return None
        self.pending_cancel = self.live.cl_ord_id
        return self.live.cl_ord_id

    def order_sent(self, cl_ord_id: str, proposal: OrderProposal) -> None:
        if self.live is not None:
            raise AccountingError(f"{self.trader_id} already has live order {self.live.cl_ord_id}")
        self.live = LiveOrder(cl_ord_id, proposal.price, proposal.qty, self.assignment)

    def on_fill(self, cl_ord_id: str, trade_price: int, qty: int) -> int:
        """Book a fill; returns the profit it earned."""
        live = self.live
        if live is None or live.cl_ord_id != cl_ord_id:
            raise AccountingError(f"{self.trader_id}: fill for unknown order {cl_ord_id}")
        if qty > live.open_qty:
            raise AccountingError(f"{self.trader_id}: fill qty {qty} > open {live.open_qty}")
        limit = live.assignment.limit
        gain = (limit - trade_price) * qty if self.side is Side.BID else (trade_price - limit) * qty
        self.profit += gain
        self.n_trades += 1
        live.open_qty -= qty
        if live.open_qty == 0:
            if self.assignment is live.assignment:
                self.assignment = None
            self.live = None
            self.pending_cancel = None
        return gain

    def on_cancelled(self, cl_ord_id: str) -> None:
        if self.live is not None and self.live.cl_ord_id == cl_ord_id:
            self.live = None
        if self.pending_cancel == cl_ord_id:
            self.pending_cancel = None

    def on_rejected(self, cl_ord_id: str) -> None:
        self.on_cancelled(cl_ord_id)

    def on_cancel_rejected(self, cl_ord_id: str) -> None:
        # the order already traded or vanished; the fill (if any) came first
        if self.pending_cancel == cl_ord_id:
            self.pending_cancel = None
            if self.live is not None and self.live.cl_ord_id == cl_ord_id:
                self.live = None

    def wants_market_events(self) -> bool:
        return self.reacts_to_market


class Giveaway(Trader):
    strategy = Strategy.GVWY

    def _price(self, a, view, now):
        if self.live is not None:
            return None
        return a.limit


class ZIC(Trader):
    strategy = Strategy.ZIC

    def _price(self, a, view, now):
        if self.live is not None:
            return None
        if self.side is Side.BID:
            return self.rng.randint(self.min_price, a.limit)
        return self.rng.randint(a.limit, self.max_price)


class Shaver(Trader):
    strategy = Strategy.SHVR
    reacts_to_market = True
    shave = 1

    def _price(self, a, view, now):
        return self._shave(a, view)

    def _shave(self, a, view):
        best = view.best(self.side)
        own = self.live.price if self.live is not None and self.live.assignment is a else None
        if self.side is Side.BID:
            if best is None:
                return own if own is not None else self.min_price
            if own is not None and own >= best:
                return None
            return min(best + self.shave, a.limit)
        if best is None:
            return own if own is not None else self.max_price
        if own is not None and own <= best:
            return None
        return max(best - self.shave, a.limit)


class Sniper(Shaver):
    strategy = Strategy.SNPR
    lurk_fraction = 0.2

    def __init__(self, *args, lurk_fraction: Optional[float] = None, **kwargs):
        super().__init__(*args, **kwargs)
        if lurk_fraction is not None:
            self.lurk_fraction = lurk_fraction

    def strike_time(self, a: Assignment) -> float:
        return a.expires - self.lurk_fraction * (a.expires - a.issue_time)

    def lurking(self, a: Assignment, now: float) -> bool:
        life = a.expires - a.issue_time
        if life <= 0:
            return True
        return (a.expires - now) / life >= self.lurk_fraction

    def _price(self, a, view, now):
        if self.lurking(a, now):
            return None
        contra = view.best(self.side.opposite)
        if contra is not None:
            if self.side is Side.BID and contra <= a.limit:
                return contra
            if self.side is Side.ASK and contra >= a.limit:
                return contra
        return self._shave(a, view)

    def next_wake(self, now):
        a = self.assignment
        if a is None:
            return None
        t = self.strike_time(a)
        return t if t > now else None


STRATEGIES: Dict[Strategy, Type[Trader]] = {
    Strategy.GVWY: Giveaway,
    Strategy.SHVR: Shaver,
    Strategy.ZIC: ZIC,
    Strategy.SNPR: Sniper,
}


def make_trader(strategy, trader_id: str, side: Side, seed: int = 0, **kwargs) -> Trader:
    try:
        cls = STRATEGIES[Strategy(strategy)]
    except ValueError:
        raise ConfigurationError(f"unknown strategy {strategy!r}") from None
    return cls(trader_id, side, seed, **kwargs)
