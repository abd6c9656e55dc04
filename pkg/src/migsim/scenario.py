"""Scenario files: jobs, policy, power model and predictor settings."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .catalog import GiB, PlacementCatalog, resolve_catalog
from .errors import MigsimError, ParseError, ScenarioError
from .predictor import IterationSample, PredictorConfig, estimate_workspace, physical_bytes
from .traces import gen_trace, read_trace_csv

MEMORY_CLASSES = ("static", "estimated", "dynamic")
POLICY_KINDS = ("baseline", "scheme_a", "scheme_b")
_POLICY_ALIASES = {"a": "scheme_a", "b": "scheme_b", "baseline": "baseline",
                   "scheme_a": "scheme_a", "scheme_b": "scheme_b"}


@dataclass(frozen=True)
class JobSpec:
    id: str
    memory_class: str
    iterations: int
    iter_duration_s: float
    declared_mem_bytes: int = 0
    # ground-truth footprint for static/estimated jobs; None means the
    # declaration is exact
    true_mem_bytes: Optional[int] = None
    trace: tuple[IterationSample, ...] = field(default=(), repr=False)
    transfer_fraction: float = 0.0
    warp_demand: int = 0
    arrival_s: float = 0.0
    startup_overhead_s: float = 0.0
    # horizon handed to the predictor; None falls back to the scenario horizon
    declared_iterations: Optional[int] = None
    workspace_bytes: int = 0

    def __post_init__(self):
        if self.memory_class not in MEMORY_CLASSES:
            raise ScenarioError(f"job {self.id}: unknown memory_class {self.memory_class!r}")
        if self.iterations < 1:
            raise ScenarioError(f"job {self.id}: iterations must be >= 1")
        if not 0.0 <= self.transfer_fraction <= 1.0:
            raise ScenarioError(f"job {self.id}: transfer_fraction must be in [0, 1]")
        if self.iter_duration_s < 0 or self.arrival_s < 0 or self.startup_overhead_s < 0:
            raise ScenarioError(f"job {self.id}: times must be non-negative")
        if self.declared_mem_bytes < 0:
            raise ScenarioError(f"job {self.id}: declared memory must be non-negative")
        if self.memory_class == "dynamic" and len(self.trace) < self.iterations:
            raise ScenarioError(
                f"job {self.id}: trace has {len(self.trace)} samples, needs {self.iterations}"
            )

    @property
    def is_dynamic(self) -> bool:
        return self.memory_class == "dynamic"

    def physical_at(self, iteration: int) -> float:
        """Resident bytes (context excluded) during a 1-based iteration."""
        if self.is_dynamic:
            return physical_bytes(self.trace[iteration - 1], self.workspace_bytes)
        if self.true_mem_bytes is not None:
            return float(self.true_mem_bytes)
        return float(self.declared_mem_bytes)

    def physical_profile(self) -> np.ndarray:
        return np.array([self.physical_at(t) for t in range(1, self.iterations + 1)])


@dataclass(frozen=True)
class PowerModel:
    idle_watts: float = 30.0
    watts_per_compute_slice: float = 25.0
    reconfig_latency_s: float = 0.5
    reconfig_watts: float = 30.0

    def __post_init__(self):
        for name in ("idle_watts", "watts_per_compute_slice", "reconfig_latency_s", "reconfig_watts"):
            if getattr(self, name) < 0:
                raise ScenarioError(f"power.{name} must be non-negative")


@dataclass(frozen=True)
class SchedulingPolicy:
    kind: str = "scheme_a"
    prediction_enabled: bool = False

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ScenarioError(f"unknown policy {self.kind!r}")

    @classmethod
    def parse(cls, name: str, prediction: bool = False) -> "SchedulingPolicy":
        try:
            return cls(_POLICY_ALIASES[name], prediction)
        except KeyError:
            raise ScenarioError(f"unknown policy {name!r}") from None


@dataclass(frozen=True)
class Scenario:
    name: str
    catalog: PlacementCatalog
    jobs: tuple[JobSpec, ...]
    policy: SchedulingPolicy = SchedulingPolicy()
    predictor: PredictorConfig = PredictorConfig()
    power: PowerModel = PowerModel()
    contention: bool = False
    seed: int = 0
    total_sms: Optional[int] = None
    paired_baseline: bool = True
    catalog_path: str = "a100-40gb"

    def __post_init__(self):
        ids = [j.id for j in self.jobs]
        if len(set(ids)) != len(ids):
            raise ScenarioError("job ids must be unique")

    @property
    def sms(self) -> Optional[int]:
        return self.total_sms if self.total_sms is not None else self.catalog.total_sms

    def with_policy(self, policy: SchedulingPolicy) -> "Scenario":
        return replace(self, policy=policy)


def _bytes(d: dict, stem: str, default=None):
    if f"{stem}_bytes" in d:
        return int(d[f"{stem}_bytes"])
    if f"{stem}_gb" in d:
        return int(round(float(d[f"{stem}_gb"]) * GiB))
    return default


def _float_bytes(d: dict, stem: str, default=0.0) -> float:
    if f"{stem}_bytes" in d:
        return float(d[f"{stem}_bytes"])
    if f"{stem}_gb" in d:
        return float(d[f"{stem}_gb"]) * GiB
    return default


def _trace_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _job_from_dict(d: dict, index: int, seed: int, base_dir: Path) -> JobSpec:
    if "id" not in d:
        raise ScenarioError(f"jobs[{index}] has no id")
    memory_class = d.get("memory_class", "static")
    iterations = int(d.get("iterations", 1))
    trace: tuple[IterationSample, ...] = ()
    if "trace_file" in d:
        trace = tuple(read_trace_csv(base_dir / d["trace_file"]))
    elif "trace_gen" in d:
        g = d["trace_gen"]
        reuse = None
        if "inv_a" in g or "inv_b" in g:
            reuse = (float(g.get("inv_a", 0.0)), float(g.get("inv_b", 1.0)))
        trace = tuple(
            gen_trace(
                _float_bytes(g, "a"),
                _float_bytes(g, "b"),
                _float_bytes(g, "sigma"),
                reuse,
                int(g.get("n", iterations)),
                int(g["seed"]) if "seed" in g else _trace_seed(seed, index),
            )
        )
    workspace = _bytes(d, "workspace", 0)
    if "workspace_config" in d:
        workspace += estimate_workspace(d["workspace_config"], int(d.get("layer_count", 1)))
    if "declared_iterations" in d:
        declared_iterations = d["declared_iterations"]
    else:
        declared_iterations = iterations
    return JobSpec(
        id=str(d["id"]),
        memory_class=memory_class,
        iterations=iterations,
        iter_duration_s=float(d.get("iter_duration_s", 1.0)),
        declared_mem_bytes=_bytes(d, "declared_mem", 0),
        true_mem_bytes=_bytes(d, "true_mem"),
        trace=trace,
        transfer_fraction=float(d.get("transfer_fraction", 0.0)),
        warp_demand=int(d.get("warp_demand", 0)),
        arrival_s=float(d.get("arrival_s", 0.0)),
        startup_overhead_s=float(d.get("startup_overhead_s", 0.0)),
        declared_iterations=declared_iterations,
        workspace_bytes=workspace,
    )


def _expand_jobs(raw_jobs: list) -> list[dict]:
    """``{"id": "gauss", "count": 3}`` becomes gauss-000 .. gauss-002."""
    out = []
    for d in raw_jobs:
        if not isinstance(d, dict):
            raise ScenarioError("every job must be an object")
        count = int(d.get("count", 1))
        if "count" not in d:
            out.append(d)
            continue
        width = max(3, len(str(count - 1)))
        for k in range(count):
            item = {key: v for key, v in d.items() if key != "count"}
            item["id"] = f"{d['id']}-{k:0{width}d}"
            out.append(item)
    return out


def scenario_from_dict(
    raw: dict,
    base_dir: Union[str, Path] = ".",
    seed: Optional[int] = None,
    catalog: Optional[str] = None,
) -> Scenario:
    """Build a scenario. ``seed`` and ``catalog`` override the file. The seed
    drives trace generation and shuffling, so it has to be known at load time."""
    if not isinstance(raw, dict):
        raise ParseError("scenario must be a JSON object")
    base_dir = Path(base_dir)
    seed = int(raw.get("seed", 0)) if seed is None else int(seed)
    catalog_ref = raw.get("catalog", "a100-40gb") if catalog is None else catalog
    cpath = base_dir / catalog_ref
    try:
        gpu = resolve_catalog(cpath if cpath.is_file() else catalog_ref)
    except MigsimError as exc:
        raise ScenarioError(f"catalog {catalog_ref!r}: {exc}") from exc
    if "context_bytes" in raw:
        gpu = replace(gpu, reserved_context_bytes=int(raw["context_bytes"]))

    pol = raw.get("policy", {})
    if isinstance(pol, str):
        pol = {"kind": pol}
    policy = SchedulingPolicy.parse(pol.get("kind", "scheme_a"), bool(pol.get("prediction", False)))

    pr = raw.get("predictor", {})
    predictor = PredictorConfig(
        z=float(pr.get("z", PredictorConfig.z)),
        epsilon=float(pr.get("epsilon", PredictorConfig.epsilon)),
        k=int(pr.get("k", PredictorConfig.k)),
        n_min=int(pr.get("n_min", PredictorConfig.n_min)),
        horizon=int(pr.get("horizon", PredictorConfig.horizon)),
    )
    pw = raw.get("power", {})
    power = PowerModel(**{k: float(v) for k, v in pw.items()})

    raw_jobs = _expand_jobs(raw.get("jobs", []))
    jobs = [_job_from_dict(d, i, seed, base_dir) for i, d in enumerate(raw_jobs)]
    if raw.get("shuffle", False):
        random.Random(seed).shuffle(jobs)

    return Scenario(
        name=str(raw.get("name", "scenario")),
        catalog=gpu,
        jobs=tuple(jobs),
        policy=policy,
        predictor=predictor,
        power=power,
        contention=bool(raw.get("contention", False)),
        seed=seed,
        total_sms=raw.get("total_sms"),
        paired_baseline=bool(raw.get("paired_baseline", True)),
        catalog_path=str(catalog_ref),
    )


def bundled_scenario_names() -> list[str]:
    folder = resources.files("migsim").joinpath("data").joinpath("scenarios")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def scenario_path(ref: Union[str, Path]) -> Path:
    """A path on disk, or the bundled scenario of that name."""
    p = Path(ref)
    if p.is_file():
        return p
    stem = p.name[:-5] if p.name.endswith(".json") else p.name
    bundled = resources.files("migsim").joinpath("data").joinpath("scenarios").joinpath(f"{stem}.json")
    if bundled.is_file():
        return Path(str(bundled))
    raise ParseError(f"no scenario file {ref}")


def load_scenario(
    ref: Union[str, Path], seed: Optional[int] = None, catalog: Optional[str] = None
) -> Scenario:
    path = scenario_path(ref)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    try:
        return scenario_from_dict(raw, path.parent, seed, catalog)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
