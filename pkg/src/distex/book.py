"""Single-symbol limit order book with price-time priority matching.

Prices are integer ticks (1 tick = 1 cent). A fill always executes at the
resting order's price.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, Optional, Tuple

DEFAULT_MAX_PRICE = 1000
MIN_PRICE = 1


class Side(str, Enum):
    BID = "Bid"
    ASK = "Ask"

    @property
    def opposite(self) -> "Side":
        return Side.ASK if self is Side.BID else Side.BID


class BookError(Exception):
    pass


class OrderRejected(BookError):
    """Incoming order violates the admission rules."""


class OrderNotFound(BookError):
    pass


class OwnershipError(BookError):
    """A client tried to cancel an order it does not own."""


@dataclass
class Order:
    order_id: int
    client_id: str
    trader_id: str
    side: Side
    price: int
    qty: int
    arrival_seq: int = 0


@dataclass(frozen=True)
class Trade:
    trade_id: int
    price: int
    qty: int
    buy_order_id: int
    sell_order_id: int
    buyer: str
    seller: str
    exec_time: int
    buy_client: str = ""
    sell_client: str = ""
    aggressor: Side = Side.BID


@dataclass(frozen=True)
class DepthSnapshot:
    """Anonymous book view: levels contain only (price, aggregate qty)."""

    bids: Tuple[Tuple[int, int], ...] = ()
    asks: Tuple[Tuple[int, int], ...] = ()
    last_trade: Optional[Tuple[int, int]] = None
    cum_volume: int = 0

    @property
    def best_bid(self) -> Optional[Tuple[int, int]]:
        return self.bids[0] if self.bids else None

    @property
    def best_ask(self) -> Optional[Tuple[int, int]]:
        return self.asks[0] if self.asks else None


class _BookSide:
    def __init__(self, side: Side):
        self.side = side
        self.levels: Dict[int, Deque[Order]] = {}
        # ascending; best is the last element for bids, first for asks
        self.prices: List[int] = []

    def __bool__(self) -> bool:
        return bool(self.prices)

    def best_price(self) -> Optional[int]:
        if not self.prices:
            return None
        return self.prices[-1] if self.side is Side.BID else self.prices[0]

    def best_queue(self) -> Deque[Order]:
        return self.levels[self.best_price()]

    def insert(self, order: Order) -> None:
        queue = self.levels.get(order.price)
        if queue is None:
            queue = self.levels[order.price] = deque()
            bisect.insort(self.prices, order.price)
        queue.append(order)

    def drop_level(self, price: int) -> None:
        del self.levels[price]
        i = bisect.bisect_left(self.prices, price)
        del self.prices[i]

    def remove(self, order: Order) -> None:
        queue = self.levels[order.price]
        queue.remove(order)
        if not queue:
            self.drop_level(order.price)

    def depth(self, n: int) -> Tuple[Tuple[int, int], ...]:
        ordered = reversed(self.prices) if self.side is Side.BID else iter(self.prices)
        out = []
        for price in ordered:
            if len(out) == n:
                break
            out.append((price, sum(o.qty for o in self.levels[price])))
        return tuple(out)


class Book:
    """Mutable order book. Exactly one caller may mutate it at a time."""

    def __init__(self, symbol: str = "XYZ", max_price: int = DEFAULT_MAX_PRICE, min_price: int = MIN_PRICE):
        if not MIN_PRICE <= min_price <= max_price:
            raise ValueError(f"bad price bounds [{min_price}, {max_price}]")
        self.symbol = symbol
        self.min_price = min_price
        self.max_price = max_price
        self.bids = _BookSide(Side.BID)
        self.asks = _BookSide(Side.ASK)
        self.orders: Dict[int, Order] = {}
        self.tape: List[Trade] = []
        self.next_arrival_seq = 1
        self.cum_volume = 0
        self._seen_ids: set = set()

    def _side(self, side: Side) -> _BookSide:
        return self.bids if side is Side.BID else self.asks

    @property
    def best_bid(self) -> Optional[int]:
        return self.bids.best_price()

    @property
    def best_ask(self) -> Optional[int]:
        return self.asks.best_price()

    def is_crossed(self) -> bool:
        bb, ba = self.best_bid, self.best_ask
        return bb is not None and ba is not None and bb >= ba

    def add_order(self, incoming: Order, exec_time: int = 0) -> Tuple[List[Trade], Optional[Order]]:
        """Match ``incoming`` against the book; rest any remainder.

        Returns the trades in execution order and the resting remainder
        (``None`` when fully filled). ``incoming`` is not mutated.
        """
        if incoming.order_id in self._seen_ids:
            raise OrderRejected(f"duplicate order_id {incoming.order_id}")
        if not self.min_price <= incoming.price <= self.max_price:
            raise OrderRejected(f"price {incoming.price} outside [{self.min_price}, {self.max_price}]")
        if incoming.qty < 1:
            raise OrderRejected(f"qty {incoming.qty} < 1")
        self._seen_ids.add(incoming.order_id)

        order = Order(**{**incoming.__dict__, "arrival_seq": self.next_arrival_seq})
        self.next_arrival_seq += 1
        contra = self._side(order.side.opposite)
        trades: List[Trade] = []

        def crosses(level: int) -> bool:
            return order.price >= level if order.side is Side.BID else order.price <= level

        while order.qty and contra and crosses(contra.best_price()):
            queue = contra.best_queue()
            resting = queue[0]
            qty = min(order.qty, resting.qty)
            buy, sell = (order, resting) if order.side is Side.BID else (resting, order)
            trade = Trade(
                trade_id=len(self.tape) + 1,
                price=resting.price,
                qty=qty,
                buy_order_id=buy.order_id,
                sell_order_id=sell.order_id,
                buyer=buy.trader_id,
                seller=sell.trader_id,
                exec_time=exec_time,
                buy_client=buy.client_id,
                sell_client=sell.client_id,
                aggressor=order.side,
            )
            self.tape.append(trade)
            self.cum_volume += qty
            trades.append(trade)
            order.qty -= qty
            resting.qty -= qty
            if resting.qty == 0:
                queue.popleft()
                del self.orders[resting.order_id]
                if not queue:
                    contra.drop_level(resting.price)

        if order.qty == 0:
            return trades, None
        self._side(order.side).insert(order)
        self.orders[order.order_id] = order
        return trades, order

    def cancel_order(self, order_id: int, client_id: str) -> Order:
        order = self.orders.get(order_id)
        if order is None:
            raise OrderNotFound(f"order {order_id} is not live")
        if order.client_id != client_id:
            raise OwnershipError(f"order {order_id} belongs to {order.client_id}, not {client_id}")
        self._side(order.side).remove(order)
        del self.orders[order_id]
        return order

    def snapshot(self, depth: int = 5) -> DepthSnapshot:
        if depth < 1:
            raise ValueError("depth must be >= 1")
        last = (self.tape[-1].price, self.tape[-1].exec_time) if self.tape else None
        return DepthSnapshot(
            bids=self.bids.depth(depth),
            asks=self.asks.depth(depth),
            last_trade=last,
            cum_volume=self.cum_volume,
        )

    def level(self, side: Side, price: int) -> List[Order]:
        """Resting orders at one price level, front of queue first."""
        return list(self._side(side).levels.get(price, ()))
