"""Trade-by-trade data ingestion and parameter calibration.

Input format: delimited text with a header row and columns
``ts,price,size,bid,ask`` where ts is seconds since session open (decimal)
and prices are in currency; loading converts prices to Ticks via the tick
size.  Ingestion streams row by row with bounded memory; calibration is a
pure function of the loaded tape.

Estimators:

* sigma: realised volatility of the mid price sampled on a fixed clock,
* (big_a, k) per spread bucket: count trades printing at or above
  mid + offset for a grid of offsets, divide by the time spent in the
  bucket, and fit ``log rate = log A - k * offset`` by least squares,
* gamma: bisection so the solved time-0 premium at q = 1 hits a target
  (one Tick by default).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CalibrationError, DataError, ParameterError
from .model import ModelParams, quote_from_w
from .ode import solve_grid

__all__ = [
    "TapeFormat",
    "TradeRecord",
    "TradeTape",
    "IntensityFit",
    "CalibrationResult",
    "load_tape",
    "calibrate_sigma",
    "calibrate_intensity",
    "calibrate_gamma",
    "calibrate_tape",
    "synthetic_tape",
]

DEFAULT_DISTANCE_GRID = tuple(np.arange(0.5, 5.01, 0.5))


@dataclass(frozen=True)
class TapeFormat:
    """How to read a tape file: delimiter, tick size, and column names."""

    tick_size: float = 1.0
    delimiter: str = ","
    ts_col: str = "ts"
    price_col: str = "price"
    size_col: str = "size"
    bid_col: str = "bid"
    ask_col: str = "ask"

    def __post_init__(self):
        if not self.tick_size > 0:
            raise ParameterError(f"tick_size must be > 0, got {self.tick_size}")


@dataclass(frozen=True)
class TradeRecord:
    """One print: timestamp (s), prices in Ticks, size in shares."""

    ts: float
    price: float
    size: float
    best_bid: float
    best_ask: float


class TradeTape:
    """Time-sorted trade prints with quote context, prices in Ticks."""

    def __init__(self, ts, price, size, bid, ask, tick_size: float = 1.0):
        self.ts = np.asarray(ts, dtype=float)
        self.price = np.asarray(price, dtype=float)
        self.size = np.asarray(size, dtype=float)
        self.bid = np.asarray(bid, dtype=float)
        self.ask = np.asarray(ask, dtype=float)
        self.tick_size = float(tick_size)
        n = self.ts.size
        if n == 0:
            raise DataError("empty tape: no trade records")
        for name, arr in (("price", self.price), ("size", self.size),
                          ("bid", self.bid), ("ask", self.ask)):
            if arr.size != n:
                raise DataError(f"column {name} length mismatch")
        if np.any(np.diff(self.ts) < 0):
            i = int(np.argmax(np.diff(self.ts) < 0)) + 1
            raise DataError(f"timestamps not sorted at record {i}")
        if np.any(self.bid >= self.ask):
            i = int(np.argmax(self.bid >= self.ask))
            raise DataError(f"bid >= ask at record {i}")
        if np.any(self.price <= 0):
            i = int(np.argmax(self.price <= 0))
            raise DataError(f"non-positive price at record {i}")
        if np.any(self.size <= 0):
            i = int(np.argmax(self.size <= 0))
            raise DataError(f"non-positive size at record {i}")
        self.ats = float(np.mean(self.size))

    def __len__(self) -> int:
        return int(self.ts.size)

    def __getitem__(self, i: int) -> TradeRecord:
        return TradeRecord(ts=float(self.ts[i]), price=float(self.price[i]),
                           size=float(self.size[i]), best_bid=float(self.bid[i]),
                           best_ask=float(self.ask[i]))

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.bid + self.ask)

    @property
    def spread(self) -> np.ndarray:
        return self.ask - self.bid

    @property
    def span(self) -> float:
        return float(self.ts[-1] - self.ts[0])

    def slice_time(self, start: float, end: float) -> "TradeTape":
        lo = int(np.searchsorted(self.ts, start, side="left"))
        hi = int(np.searchsorted(self.ts, end, side="right"))
        if hi <= lo:
            raise DataError(f"no records in [{start}, {end}]")
        return TradeTape(self.ts[lo:hi], self.price[lo:hi], self.size[lo:hi],
                         self.bid[lo:hi], self.ask[lo:hi], self.tick_size)

    def write_csv(self, path, fmt: TapeFormat | None = None) -> None:
        """Write back in the input format (prices restored to currency)."""
        fmt = fmt or TapeFormat(tick_size=self.tick_size)
        scale = fmt.tick_size
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"{fmt.ts_col},{fmt.price_col},{fmt.size_col},"
                     f"{fmt.bid_col},{fmt.ask_col}\n")
            for i in range(len(self)):
                fh.write(f"{self.ts[i]:.17g},{self.price[i] * scale:.17g},"
                         f"{self.size[i]:.17g},{self.bid[i] * scale:.17g},"
                         f"{self.ask[i] * scale:.17g}\n")


def load_tape(path, fmt: TapeFormat | None = None) -> TradeTape:
    """Load and validate a tape file; prices are converted to Ticks."""
    fmt = fmt or TapeFormat()
    cols = {name: [] for name in ("ts", "price", "size", "bid", "ask")}
    col_names = (fmt.ts_col, fmt.price_col, fmt.size_col, fmt.bid_col, fmt.ask_col)
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read tape {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh, delimiter=fmt.delimiter)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        missing = [c for c in col_names if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        for row in reader:
            line = reader.line_num
            try:
                values = [float(row[c]) for c in col_names]
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}: malformed row at line {line}") from exc
            for key, value in zip(cols, values):
                cols[key].append(value)
    if not cols["ts"]:
        raise DataError(f"{path}: no data rows")
    scale = 1.0 / fmt.tick_size
    try:
        return TradeTape(
            ts=cols["ts"],
            price=np.asarray(cols["price"]) * scale,
            size=cols["size"],
            bid=np.asarray(cols["bid"]) * scale,
            ask=np.asarray(cols["ask"]) * scale,
            tick_size=fmt.tick_size,
        )
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


def calibrate_sigma(tape: TradeTape, sampling_dt: float) -> float:
    """Realised volatility of the mid price in Tick/sqrt(s).

    Samples the latest-known mid every ``sampling_dt`` seconds and returns
    ``sqrt(sum(dS^2) / (n * sampling_dt))``.  Requires the tape to span at
    least 100 sampling intervals.
    """
    if not sampling_dt > 0:
        raise ParameterError(f"sampling_dt must be > 0, got {sampling_dt}")
    if tape.span < 100 * sampling_dt:
        raise CalibrationError(
            f"tape spans {tape.span:.6g}s < 100 * sampling_dt = {100 * sampling_dt:.6g}s"
        )
    n = int(tape.span / sampling_dt)
    sample_t = tape.ts[0] + sampling_dt * np.arange(n + 1)
    idx = np.searchsorted(tape.ts, sample_t, side="right") - 1
    mids = tape.mid[idx]
    ds = np.diff(mids)
    return float(math.sqrt(np.sum(ds * ds) / (n * sampling_dt)))


@dataclass(frozen=True)
class IntensityFit:
    """Per-spread-bucket fill-rate fit: rate(offset) = A_hat exp(-k_hat offset)."""

    a_hat: float
    k_hat: float
    n_obs: int


def _spread_bucket(spread: np.ndarray) -> np.ndarray:
    # integer Ticks, half rounded up
    return np.floor(spread + 0.5).astype(np.int64)


def calibrate_intensity(tape: TradeTape,
                        distance_grid: Sequence[float] = DEFAULT_DISTANCE_GRID,
                        window: Optional[float] = None,
                        end_time: Optional[float] = None,
                        n_min: int = 50):
    """Fit (A_hat, k_hat) per spread bucket from print arrival rates.

    For each bucket and each offset in ``distance_grid`` the arrival rate of
    trades printing at or above mid + offset is the count divided by the
    time attributed to the bucket; the log rates are then fit affinely in
    the offset.  Buckets with fewer than ``n_min`` prints, fewer than 3
    nonzero-count offsets, or a non-positive decay estimate are dropped.

    Returns ``(fits, dropped)``: a dict bucket -> :class:`IntensityFit` and
    a dict bucket -> reason for the unusable ones.
    """
    grid = np.asarray(distance_grid, dtype=float)
    if grid.size < 3:
        raise ParameterError(f"distance_grid needs >= 3 offsets, got {grid.size}")
    if np.any(np.diff(grid) <= 0) or grid[0] <= 0:
        raise ParameterError("distance_grid must be positive and increasing")
    end = float(tape.ts[-1]) if end_time is None else float(end_time)
    start = float(tape.ts[0]) if window is None else end - float(window)
    sliced = tape.slice_time(start, end)

    buckets = _spread_bucket(sliced.spread)
    offsets = sliced.price - sliced.mid
    # time in each bucket: the gap up to the next print carries the current
    # bucket's label, plus the tail out to the window end
    durations = np.append(np.diff(sliced.ts), max(end - sliced.ts[-1], 0.0))

    fits, dropped = {}, {}
    for bucket in np.unique(buckets):
        in_bucket = buckets == bucket
        n_obs = int(np.sum(in_bucket))
        key = int(bucket)
        if n_obs < n_min:
            dropped[key] = f"only {n_obs} prints < n_min = {n_min}"
            continue
        total_time = float(np.sum(durations[in_bucket]))
        if total_time <= 0:
            dropped[key] = "no time attributed to bucket"
            continue
        counts = np.array([np.sum(in_bucket & (offsets >= d)) for d in grid])
        usable = counts > 0
        if np.sum(usable) < 3:
            dropped[key] = f"only {int(np.sum(usable))} offsets with prints"
            continue
        rates = counts[usable] / total_time
        slope, intercept = np.polyfit(grid[usable], np.log(rates), 1)
        k_hat = -float(slope)
        if k_hat <= 1e-12:  # flat or inverted rate profile
            dropped[key] = f"non-positive decay estimate ({k_hat:.3g})"
            continue
        fits[key] = IntensityFit(a_hat=float(math.exp(intercept)),
                                 k_hat=k_hat, n_obs=n_obs)
    return fits, dropped


def calibrate_gamma(big_a: float, k: float, sigma: float, mu: float, b: float,
                    horizon: float, target_quote: float = 1.0,
                    bracket=(1e-6, 1e2), quote_tol: float = 1e-4,
                    n_steps: int = 4000) -> float:
    """Risk aversion that makes the time-0 premium at q = 1 hit the target.

    The premium is continuous and decreasing in gamma over the bracket, so
    plain bisection to ``quote_tol`` on the quote suffices.  If the target
    falls outside the premiums attainable on the bracket, raises
    :class:`CalibrationError` reporting the attainable interval.
    Deterministic: no randomness anywhere in the evaluation.
    """
    lo, hi = bracket
    if not 0 < lo < hi:
        raise ParameterError(f"bad bracket {bracket}")

    def first_quote(gamma: float) -> float:
        params = ModelParams(mu=mu, sigma=sigma, big_a=big_a, k=k, gamma=gamma,
                             b=b, horizon=horizon, q_max=1)
        grid = solve_grid(params, n_steps=n_steps)
        return quote_from_w(grid.values[0, 1], grid.values[0, 0], params)

    q_lo, q_hi = first_quote(lo), first_quote(hi)
    if not (q_hi - quote_tol <= target_quote <= q_lo + quote_tol):
        raise CalibrationError(
            f"target quote {target_quote} outside attainable "
            f"[{q_hi:.6g}, {q_lo:.6g}] for gamma in [{lo:.3g}, {hi:.3g}]"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        q_mid = first_quote(mid)
        if abs(q_mid - target_quote) < quote_tol:
            return mid
        if q_mid > target_quote:
            lo = mid
        else:
            hi = mid
    raise CalibrationError("gamma bisection failed to converge")


@dataclass(frozen=True)
class CalibrationResult:
    """Everything the backtester needs: sigma, per-bucket (A, k), gamma."""

    sigma_hat: float
    buckets: dict
    gamma_hat: Optional[float] = None
    dropped: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "sigma_hat": self.sigma_hat,
            "gamma_hat": self.gamma_hat,
            "buckets": {str(k): {"A_hat": f.a_hat, "k_hat": f.k_hat,
                                 "n_obs": f.n_obs}
                        for k, f in sorted(self.buckets.items())},
            "dropped": {str(k): v for k, v in sorted(self.dropped.items())},
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)


def calibrate_tape(tape: TradeTape, sampling_dt: float = 1.0,
                   distance_grid: Sequence[float] = DEFAULT_DISTANCE_GRID,
                   window: Optional[float] = None, n_min: int = 50,
                   gamma_target: Optional[float] = None,
                   b: float = 3.0, horizon: float = 300.0) -> CalibrationResult:
    """One-stop calibration of (sigma, A, k[, gamma]) from a tape."""
    sigma_hat = calibrate_sigma(tape, sampling_dt)
    fits, dropped = calibrate_intensity(tape, distance_grid, window=window,
                                        n_min=n_min)
    gamma_hat = None
    if gamma_target is not None:
        if not fits:
            raise CalibrationError("no usable spread bucket for the gamma rule")
        # the busiest bucket stands in for "typical values of A and k"
        best = max(fits.values(), key=lambda f: f.n_obs)
        gamma_hat = calibrate_gamma(best.a_hat, best.k_hat, sigma_hat, 0.0,
                                    b, horizon, target_quote=gamma_target)
    return CalibrationResult(sigma_hat=sigma_hat, buckets=fits,
                             gamma_hat=gamma_hat, dropped=dropped)


def synthetic_tape(duration: float, sigma: float, big_a: float, k: float,
                   mid0: float = 1000.0, drift: float = 0.0,
                   spread_schedule=1.0, tick_size: float = 1.0, seed: int = 0,
                   two_sided: bool = True, size_range=(50.0, 150.0)) -> TradeTape:
    """Generate a tape whose prints match the model's fill-rate law.

    Trades arrive as a Poisson stream (rate ``2 big_a`` two-sided, else
    ``big_a``); each print lands an Exp(k)-distributed offset above the mid
    (or below, for the sell side), so trades at or above mid + d arrive at
    rate ``big_a exp(-k d)`` exactly.  The mid diffuses with volatility
    ``sigma``.  ``spread_schedule`` is either a constant spread in Ticks or
    a list of ``(start_time, spread)`` pairs.  Prices are in Ticks; use
    :meth:`TradeTape.write_csv` to produce a loadable file in currency.
    """
    if duration <= 0:
        raise ParameterError("duration must be > 0")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    rate = 2.0 * big_a if two_sided else big_a
    n = rng.poisson(rate * duration)
    if n < 2:
        raise DataError("synthetic tape came out empty; increase duration or big_a")
    ts = np.sort(rng.random(n) * duration)
    gaps = np.diff(np.concatenate(([0.0], ts)))
    mid = (mid0 + drift * ts
           + np.cumsum(rng.standard_normal(n) * sigma * np.sqrt(gaps)))
    side = rng.random(n) < 0.5 if two_sided else np.zeros(n, dtype=bool)
    offs = rng.exponential(1.0 / k, size=n)
    price = np.where(side, mid - offs, mid + offs)
    if np.any(price <= 0):
        raise DataError("synthetic prices went non-positive; raise mid0")
    if np.isscalar(spread_schedule):
        spread = np.full(n, float(spread_schedule))
    else:
        sched = sorted(spread_schedule)
        starts = np.array([s for s, _ in sched])
        vals = np.array([v for _, v in sched])
        spread = vals[np.clip(np.searchsorted(starts, ts, side="right") - 1, 0, None)]
    sizes = rng.uniform(size_range[0], size_range[1], size=n)
    return TradeTape(ts=ts, price=price, size=sizes,
                     bid=mid - 0.5 * spread, ask=mid + 0.5 * spread,
                     tick_size=tick_size)
