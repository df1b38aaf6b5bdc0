"""Experiment grid: 6 level situations x (baseline + 9 full-hierarchy setups).

Each run is a single seeded episode; the same level gets the same seed in
every condition so conditions are compared on identical disturbance noise.
Metrics are recomputed from the written trace CSVs, which keeps every number
in the summary reproducible from the run artifacts alone.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .agent import AgentConfig, run_episode
from .config import Scalars
from .environment import LEVEL_IDS, builtin_levels
from .traces import EpisodeTrace, read_trace, write_trace

PERSISTENCE_STEPS = 6    # 300 ms: how long a new direction must be kept
PERSISTENCE_QUORUM = 4   # steps actually bearing the new direction ("significant")
PRIOR_WINDOW = 3         # 150 ms of SoC before a strategy change
POSTERIOR_WINDOW = 12    # 600 ms after

DIRECTION = {"left": -1, "none": 0, "right": 1}

FIXED_K_VALUES = (0.3, 0.5, 0.7)
CCL_THRESHOLDS = (0.3, 0.5, 0.7)


@dataclass(frozen=True)
class Condition:
    name: str
    fixed_k: float | None
    ccl_threshold: float
    ccl_enabled: bool


def baseline_condition() -> Condition:
    return Condition(name="baseline", fixed_k=None, ccl_threshold=0.5, ccl_enabled=False)


def full_hierarchy_conditions() -> list[Condition]:
    return [
        Condition(name=f"K{k}-T{t}", fixed_k=k, ccl_threshold=t, ccl_enabled=True)
        for k in FIXED_K_VALUES for t in CCL_THRESHOLDS
    ]


def grid_conditions() -> list[Condition]:
    return [baseline_condition()] + full_hierarchy_conditions()


@dataclass(frozen=True)
class GridSpec:
    level_ids: tuple[str, ...] = LEVEL_IDS
    conditions: tuple[Condition, ...] = tuple(grid_conditions())
    base_seed: int = 12345
    repeats: int = 1
    scalars: Scalars = Scalars()

    def run_seed(self, level_index: int, repeat: int) -> int:
        # level-paired: every condition sees the same noise for a given level
        return self.base_seed + 1000 * repeat + level_index


@dataclass(frozen=True)
class StrategyChangeEvent:
    step: int
    direction_before: int
    direction_after: int
    soc_prior_ll: float | None = None
    soc_prior_hl: float | None = None
    soc_post_ll: float | None = None
    soc_post_hl: float | None = None
    prior_partial: bool = False
    post_partial: bool = False


def detect_strategy_changes(trace: EpisodeTrace) -> list[StrategyChangeEvent]:
    """Steering-direction reversals where both sides are sustained runs.

    A step starts a sustained run when the following 6 steps contain no
    opposite input and at least 4 of them steer the same way (neutral steps
    are allowed inside a run but a lone corrective nudge followed by
    coasting does not qualify).  A strategy change is a sustained run whose
    direction differs from the previous sustained run; the first sustained
    run of the episode is the initial direction, not a change.  Runs cut
    short by the end of the episode are judged on the steps that exist.
    """
    dirs = [DIRECTION[i] for i in trace.inputs()]
    events: list[StrategyChangeEvent] = []
    sustained = 0
    for t, d in enumerate(dirs):
        if d == 0 or d == sustained:
            continue
        window = dirs[t:t + PERSISTENCE_STEPS]
        if any(w == -d for w in window):
            continue
        if sum(1 for w in window if w == d) < min(PERSISTENCE_QUORUM, len(window)):
            continue
        if sustained != 0:
            events.append(StrategyChangeEvent(step=t, direction_before=sustained,
                                              direction_after=d))
        sustained = d
    return events


def _window_mean(series: list[float | None], lo: int, hi: int) -> float | None:
    values = [v for v in series[max(lo, 0):hi + 1] if v is not None]
    return sum(values) / len(values) if values else None


def soc_window_stats(trace: EpisodeTrace,
                     events: list[StrategyChangeEvent]) -> list[StrategyChangeEvent]:
    """Fill each event with mean SoC 150 ms before and 600 ms after it."""
    ll = trace.ll_series()
    hl = trace.hl_series()
    last = trace.steps - 1
    out = []
    for ev in events:
        t = ev.step
        out.append(replace(
            ev,
            soc_prior_ll=_window_mean(ll, t - PRIOR_WINDOW, t - 1),
            soc_prior_hl=_window_mean(hl, t - PRIOR_WINDOW, t - 1),
            soc_post_ll=_window_mean(ll, t + 1, t + POSTERIOR_WINDOW),
            soc_post_hl=_window_mean(hl, t + 1, t + POSTERIOR_WINDOW),
            prior_partial=t - PRIOR_WINDOW < 0,
            post_partial=t + POSTERIOR_WINDOW > last,
        ))
    return out


@dataclass
class RunMetrics:
    run_id: str
    level_id: str
    condition: str
    seed: int
    crashes: int
    steps: int
    mean_ll_soc: float | None
    mean_hl_soc: float | None
    strategy_changes: int | None
    events: list[StrategyChangeEvent] = field(default_factory=list)
    error: str | None = None


def metrics_from_trace(trace: EpisodeTrace, run_id: str) -> RunMetrics:
    ll_values = [v for v in trace.ll_series() if v is not None]
    hl_values = [v for v in trace.hl_series() if v is not None]
    ccl_enabled = trace.meta.get("ccl_enabled") == "1"
    if ccl_enabled:
        events = soc_window_stats(trace, detect_strategy_changes(trace))
        changes = len(events)
    else:
        events, changes = [], None
    return RunMetrics(
        run_id=run_id,
        level_id=trace.meta.get("level", "?"),
        condition=_condition_name(trace.meta),
        seed=int(trace.meta.get("seed", "0")),
        crashes=1 if trace.outcome == "crashed" else 0,
        steps=trace.steps,
        mean_ll_soc=sum(ll_values) / len(ll_values) if ll_values else None,
        mean_hl_soc=sum(hl_values) / len(hl_values) if hl_values else None,
        strategy_changes=changes,
        events=events,
    )


def _condition_name(meta: dict[str, str]) -> str:
    if meta.get("ccl_enabled") != "1":
        return "baseline"
    k = float(meta.get("k_mode", "0.5"))
    t = float(meta.get("ccl_threshold", "0.5"))
    return f"K{k}-T{t}"


def _run_one(args) -> tuple[str, str, EpisodeTrace | None, str | None]:
    run_id, level, condition, seed, scalars = args
    try:
        config = AgentConfig(
            fixed_k=condition.fixed_k,
            ccl_threshold=condition.ccl_threshold,
            ccl_enabled=condition.ccl_enabled,
            seed=seed,
            scalars=scalars,
        )
        return run_id, level.id, run_episode(level, config), None
    except Exception as exc:  # a failed run must not abort the grid
        return run_id, level.id, None, f"{type(exc).__name__}: {exc}"


@dataclass
class GridResult:
    metrics: list[RunMetrics]
    summary: str
    checks: list[tuple[str, bool, str]]

    @property
    def all_checks_pass(self) -> bool:
        return all(ok for _, ok, _ in self.checks)


def run_grid(spec: GridSpec = GridSpec(), out_dir: Path | None = None,
             jobs: int = 1) -> GridResult:
    levels = {lvl.id: lvl for lvl in builtin_levels()}
    tasks = []
    for repeat in range(spec.repeats):
        for condition in spec.conditions:
            for level_index, level_id in enumerate(spec.level_ids):
                run_id = f"{level_id}_{condition.name}"
                if spec.repeats > 1:
                    run_id += f"_r{repeat}"
                seed = spec.run_seed(level_index, repeat)
                tasks.append((run_id, levels[level_id], condition, seed, spec.scalars))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_one, tasks))
    else:
        outcomes = [_run_one(t) for t in tasks]

    metrics: list[RunMetrics] = []
    for (run_id, level_id, trace, error), task in zip(outcomes, tasks):
        condition, seed = task[2], task[3]
        if trace is None:
            metrics.append(RunMetrics(
                run_id=run_id, level_id=level_id, condition=condition.name, seed=seed,
                crashes=0, steps=0, mean_ll_soc=None, mean_hl_soc=None,
                strategy_changes=None, error=error))
            continue
        if out_dir is not None:
            path = Path(out_dir) / "runs" / f"{run_id}.csv"
            write_trace(trace, path)
            trace = read_trace(path)   # metrics come from the artifact, not memory
        metrics.append(metrics_from_trace(trace, run_id))

    checks = qualitative_checks(metrics)
    summary = render_summary(metrics, spec, checks)
    if out_dir is not None:
        (Path(out_dir) / "summary.txt").write_text(summary, encoding="utf-8")
        (Path(out_dir) / "summary.csv").write_text(metrics_csv(metrics), encoding="utf-8")
    return GridResult(metrics=metrics, summary=summary, checks=checks)


def report_from_dir(run_dir: Path) -> GridResult:
    """Recompute the whole summary from the per-run trace CSVs in a grid directory."""
    runs_dir = Path(run_dir) / "runs"
    paths = sorted(runs_dir.glob("*.csv"))
    if not paths:
        raise FileNotFoundError(f"no run traces under {runs_dir}")
    metrics = [metrics_from_trace(read_trace(p), p.stem) for p in paths]
    metrics.sort(key=_metric_order)
    checks = qualitative_checks(metrics)
    return GridResult(metrics=metrics, summary=render_summary(metrics, None, checks),
                      checks=checks)


def _metric_order(m: RunMetrics) -> tuple:
    names = [c.name for c in grid_conditions()]
    cond = names.index(m.condition) if m.condition in names else len(names)
    return (cond, m.level_id, m.run_id)


# ---------------------------------------------------------------------------
# aggregation, qualitative checks, and the report document
# ---------------------------------------------------------------------------

def _fmt(value: float | None, digits: int = 6) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


def _by_condition(metrics: list[RunMetrics]) -> dict[str, list[RunMetrics]]:
    grouped: dict[str, list[RunMetrics]] = {}
    for name in [c.name for c in grid_conditions()]:
        rows = [m for m in metrics if m.condition == name and m.error is None]
        if rows:
            grouped[name] = rows
    for m in metrics:
        if m.error is None and m.condition not in grouped:
            grouped.setdefault(m.condition, []).append(m)
    return grouped


def pooled_events(metrics: list[RunMetrics]) -> list[StrategyChangeEvent]:
    return [ev for m in metrics for ev in m.events]


def qualitative_checks(metrics: list[RunMetrics]) -> list[tuple[str, bool, str]]:
    """The grid-level claims the summary is expected to reproduce."""
    full = [m for m in metrics if m.condition != "baseline" and m.error is None]
    checks: list[tuple[str, bool, str]] = []

    # fewest crashes at the balanced K
    crashes_by_k = {
        k: sum(m.crashes for m in full if m.condition.startswith(f"K{k}-"))
        for k in FIXED_K_VALUES
    }
    c3, c5, c7 = (crashes_by_k[k] for k in FIXED_K_VALUES)
    balanced_ok = c5 <= c3 and c5 <= c7 and (c5 < c3 or c5 < c7)
    checks.append((
        "fewest crashes at K=0.5",
        balanced_ok,
        f"crashes by K: 0.3 -> {c3}, 0.5 -> {c5}, 0.7 -> {c7}",
    ))

    # SoC rises across strategy changes
    by_cond = _by_condition([m for m in full])
    eligible = [m for name, rows in by_cond.items() if name != "baseline"
                and sum(r.strategy_changes or 0 for r in rows) >= 1
                for m in rows]
    events = pooled_events(eligible)
    lift_detail, lift_ok = "no strategy changes anywhere", False
    if events:
        def lift_stats(prior_key: str, post_key: str) -> tuple[float, float, float]:
            pairs = [(getattr(e, prior_key), getattr(e, post_key)) for e in events
                     if getattr(e, prior_key) is not None and getattr(e, post_key) is not None]
            prior = sum(p for p, _ in pairs) / len(pairs)
            post = sum(q for _, q in pairs) / len(pairs)
            frac = sum(1 for p, q in pairs if q > p) / len(pairs)
            return prior, post, frac

        ll_prior, ll_post, ll_frac = lift_stats("soc_prior_ll", "soc_post_ll")
        hl_prior, hl_post, hl_frac = lift_stats("soc_prior_hl", "soc_post_hl")
        lift_ok = (ll_post > ll_prior and hl_post > hl_prior
                   and ll_frac > 0.55 and hl_frac > 0.55)
        lift_detail = (
            f"{len(events)} events; LL {ll_prior:.3f} -> {ll_post:.3f} ({ll_frac:.0%} lifted), "
            f"HL {hl_prior:.3f} -> {hl_post:.3f} ({hl_frac:.0%} lifted)")
    checks.append(("SoC higher after strategy changes than before", lift_ok, lift_detail))

    # HL SoC above LL SoC in most conditions
    higher = 0
    full_conditions = [c.name for c in full_hierarchy_conditions()]
    for name in full_conditions:
        rows = by_cond.get(name, [])
        if not rows:
            continue
        mean_ll = sum(m.mean_ll_soc for m in rows) / len(rows)
        mean_hl = sum(m.mean_hl_soc for m in rows) / len(rows)
        if mean_hl >= mean_ll:
            higher += 1
    hl_ok = higher >= 6
    checks.append((
        "mean HL SoC >= mean LL SoC in most conditions",
        hl_ok,
        f"{higher} of {len(full_conditions)} conditions",
    ))

    # more strategy changes at higher thresholds
    inversions = 0
    per_cell = {}
    for k in FIXED_K_VALUES:
        for t in CCL_THRESHOLDS:
            rows = by_cond.get(f"K{k}-T{t}", [])
            per_cell[(k, t)] = sum(m.strategy_changes or 0 for m in rows)
        for t_low, t_high in zip(CCL_THRESHOLDS, CCL_THRESHOLDS[1:]):
            if per_cell[(k, t_low)] > per_cell[(k, t_high)]:
                inversions += 1
    mono_ok = inversions <= 1
    cells = ", ".join(f"K{k}: " + "/".join(str(per_cell[(k, t)]) for t in CCL_THRESHOLDS)
                      for k in FIXED_K_VALUES)
    checks.append((
        "strategy changes non-decreasing in CCL threshold",
        mono_ok,
        f"changes per threshold 0.3/0.5/0.7 -> {cells}; inversions: {inversions}",
    ))
    return checks


def metrics_csv(metrics: list[RunMetrics]) -> str:
    lines = ["run_id,level,condition,seed,steps,crashed,strategy_changes,mean_ll_soc,mean_hl_soc,error"]
    for m in metrics:
        lines.append(",".join([
            m.run_id, m.level_id, m.condition, str(m.seed), str(m.steps), str(m.crashes),
            "" if m.strategy_changes is None else str(m.strategy_changes),
            "" if m.mean_ll_soc is None else f"{m.mean_ll_soc:.6f}",
            "" if m.mean_hl_soc is None else f"{m.mean_hl_soc:.6f}",
            m.error or "",
        ]))
    return "\n".join(lines) + "\n"


def render_summary(metrics: list[RunMetrics], spec: GridSpec | None,
                   checks: list[tuple[str, bool, str]]) -> str:
    lines = ["soclander grid summary", "======================"]
    good = [m for m in metrics if m.error is None]
    failed = [m for m in metrics if m.error is not None]
    lines.append(f"runs: {len(metrics)} ({len(failed)} failed)")
    if spec is not None:
        lines.append(f"levels: {' '.join(spec.level_ids)}  base seed: {spec.base_seed}")
    lines.append("")

    for name, rows in _by_condition(good).items():
        rows = sorted(rows, key=lambda m: (m.level_id, m.run_id))
        lines.append(f"condition: {name}")
        lines.append(f"  crashes: {sum(m.crashes for m in rows)}/{len(rows)}"
                     f"  ({' '.join(m.level_id + ('!' if m.crashes else '') for m in rows)})")
        mean_ll = sum(m.mean_ll_soc for m in rows if m.mean_ll_soc is not None) / len(rows)
        lines.append(f"  mean LL SoC: {_fmt(mean_ll)}")
        if name != "baseline":
            mean_hl = sum(m.mean_hl_soc for m in rows if m.mean_hl_soc is not None) / len(rows)
            changes = sum(m.strategy_changes or 0 for m in rows)
            lines.append(f"  mean HL SoC: {_fmt(mean_hl)}")
            lines.append(f"  strategy changes: {changes}")
            events = pooled_events(rows)
            if events:
                def _mean(key):
                    vals = [getattr(e, key) for e in events if getattr(e, key) is not None]
                    return sum(vals) / len(vals) if vals else None
                partial = sum(1 for e in events if e.prior_partial or e.post_partial)
                lines.append(
                    "  SoC around changes (prior 150ms -> post 600ms): "
                    f"LL {_fmt(_mean('soc_prior_ll'), 3)} -> {_fmt(_mean('soc_post_ll'), 3)}, "
                    f"HL {_fmt(_mean('soc_prior_hl'), 3)} -> {_fmt(_mean('soc_post_hl'), 3)}"
                    f"  events: {len(events)} ({partial} partial)")
            else:
                lines.append("  SoC around changes: n/a (no events)")
        lines.append("")

    if failed:
        lines.append("failed runs:")
        for m in failed:
            lines.append(f"  {m.run_id}: {m.error}")
        lines.append("")

    lines.append("qualitative checks:")
    for name, ok, detail in checks:
        lines.append(f"  [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    lines.append("")
    return "\n".join(lines)
