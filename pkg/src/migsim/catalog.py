"""GPU partition geometry: profiles, legal placements and tight-fit selection.

A catalog is pure data. Placement legality is decided only by the
``allowed_starts`` of each profile plus memory-slot non-overlap and the
compute-slice budget, so other MIG-capable GPUs are just extra JSON files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Union

from .errors import NoFit, ParseError, ValidationError

GiB = 1 << 30
MiB = 1 << 20

DEFAULT_CONTEXT_BYTES = 512 * MiB


@dataclass(frozen=True)
class Profile:
    name: str
    compute_slices: int
    memory_slices: int
    memory_bytes: int
    allowed_starts: tuple[int, ...]

    def slots(self, start: int) -> range:
        return range(start, start + self.memory_slices)


@dataclass(frozen=True)
class PlacementCatalog:
    gpu_name: str
    total_compute_slices: int
    total_memory_slots: int
    bytes_per_memory_slot: int
    profiles: tuple[Profile, ...]
    reserved_context_bytes: int = DEFAULT_CONTEXT_BYTES
    total_sms: Optional[int] = None

    @property
    def total_memory_bytes(self) -> int:
        return self.total_memory_slots * self.bytes_per_memory_slot

    @property
    def full_profile(self) -> Profile:
        """The profile with the most memory, most compute on ties."""
        if not self.profiles:
            raise NoFit(f"{self.gpu_name} has no profiles")
        return max(self.profiles, key=lambda p: (p.memory_bytes, p.compute_slices))

    def profile(self, name: str) -> Profile:
        for p in self.profiles:
            if p.name == name:
                return p
        raise KeyError(name)

    def profile_index(self, profile: Profile) -> int:
        return self.profiles.index(profile)

    def memory_ladder(self) -> list[int]:
        """Distinct profile memory sizes, ascending."""
        return sorted({p.memory_bytes for p in self.profiles})

    def to_dict(self) -> dict:
        d = {
            "gpu_name": self.gpu_name,
            "total_compute_slices": self.total_compute_slices,
            "total_memory_slots": self.total_memory_slots,
            "bytes_per_memory_slot": self.bytes_per_memory_slot,
            "reserved_context_bytes": self.reserved_context_bytes,
            "profiles": [
                {
                    "name": p.name,
                    "compute_slices": p.compute_slices,
                    "memory_slices": p.memory_slices,
                    "allowed_starts": list(p.allowed_starts),
                }
                for p in self.profiles
            ],
        }
        if self.total_sms is not None:
            d["total_sms"] = self.total_sms
        return d


def _require(obj: dict, key: str, kind, where: str = ""):
    name = f"{where}{key}"
    if key not in obj:
        raise ParseError(f"missing field '{name}'")
    value = obj[key]
    # bool is an int subclass; reject it for numeric fields
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ParseError(f"field '{name}' must be an integer, got {value!r}")
    if kind is not int and not isinstance(value, kind):
        raise ParseError(f"field '{name}' must be {kind.__name__}, got {value!r}")
    return value


def catalog_from_dict(raw: dict) -> PlacementCatalog:
    if not isinstance(raw, dict):
        raise ParseError("catalog must be a JSON object")
    gpu_name = _require(raw, "gpu_name", str)
    total_compute = _require(raw, "total_compute_slices", int)
    total_slots = _require(raw, "total_memory_slots", int)
    per_slot = _require(raw, "bytes_per_memory_slot", int)
    context = raw.get("reserved_context_bytes", DEFAULT_CONTEXT_BYTES)
    if isinstance(context, bool) or not isinstance(context, int):
        raise ParseError("field 'reserved_context_bytes' must be an integer")
    total_sms = raw.get("total_sms")
    if total_sms is not None and (isinstance(total_sms, bool) or not isinstance(total_sms, int)):
        raise ParseError("field 'total_sms' must be an integer")
    raw_profiles = _require(raw, "profiles", list)

    if total_compute < 1:
        raise ValidationError("total_compute_slices", "must be >= 1")
    if total_slots < 1:
        raise ValidationError("total_memory_slots", "must be >= 1")
    if per_slot < 1:
        raise ValidationError("bytes_per_memory_slot", "must be >= 1")
    if context < 0:
        raise ValidationError("reserved_context_bytes", "must be >= 0")
    if total_sms is not None and total_sms < 1:
        raise ValidationError("total_sms", "must be >= 1")

    profiles = []
    seen = set()
    for i, rp in enumerate(raw_profiles):
        where = f"profiles[{i}]."
        if not isinstance(rp, dict):
            raise ParseError(f"profiles[{i}] must be an object")
        name = _require(rp, "name", str, where)
        cs = _require(rp, "compute_slices", int, where)
        ms = _require(rp, "memory_slices", int, where)
        starts = _require(rp, "allowed_starts", list, where)
        for s in starts:
            if isinstance(s, bool) or not isinstance(s, int):
                raise ParseError(f"field '{where}allowed_starts' must hold integers")
        if name in seen:
            raise ValidationError(f"{where}name", f"duplicate profile name {name!r}")
        seen.add(name)
        if ms < 1:
            raise ValidationError(f"{where}memory_slices", "must be >= 1")
        if cs < 1 or cs > total_compute:
            raise ValidationError(f"{where}compute_slices", f"must be in 1..{total_compute}")
        if not starts:
            raise ValidationError(f"{where}allowed_starts", "must not be empty")
        if len(set(starts)) != len(starts):
            raise ValidationError(f"{where}allowed_starts", "duplicate start slot")
        for s in starts:
            if s < 0 or s + ms > total_slots:
                raise ValidationError(
                    f"{where}allowed_starts",
                    f"start {s} with {ms} memory slices exceeds {total_slots} slots",
                )
        profiles.append(Profile(name, cs, ms, ms * per_slot, tuple(sorted(starts))))

    profiles.sort(key=lambda p: (p.memory_bytes, p.compute_slices, p.name))
    return PlacementCatalog(
        gpu_name=gpu_name,
        total_compute_slices=total_compute,
        total_memory_slots=total_slots,
        bytes_per_memory_slot=per_slot,
        profiles=tuple(profiles),
        reserved_context_bytes=context,
        total_sms=total_sms,
    )


def load_catalog(path: Union[str, Path]) -> PlacementCatalog:
    """Load and validate a catalog JSON file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read catalog {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return catalog_from_dict(raw)


def bundled_catalog(name: str = "a100-40gb") -> PlacementCatalog:
    """Load one of the catalogs shipped in ``migsim/data``."""
    fname = name if name.endswith(".json") else f"{name}.json"
    ref = resources.files("migsim").joinpath("data").joinpath(fname)
    if not ref.is_file():
        raise ParseError(f"no bundled catalog named {name!r}")
    return catalog_from_dict(json.loads(ref.read_text()))


def resolve_catalog(spec: Union[str, Path, None]) -> PlacementCatalog:
    """Accept a filesystem path or the name of a bundled catalog."""
    if spec is None:
        return bundled_catalog()
    if Path(spec).is_file():
        return load_catalog(spec)
    return bundled_catalog(str(spec))


def sm_capacity(catalog: PlacementCatalog, profile: Profile, total_sms: int) -> float:
    return total_sms * profile.compute_slices / catalog.total_compute_slices


def _sms(catalog: PlacementCatalog, total_sms: Optional[int]) -> int:
    sms = total_sms if total_sms is not None else catalog.total_sms
    if sms is None:
        raise ValueError("warp folding needs total_sms (catalog or scenario)")
    return sms


def wave_count(
    catalog: PlacementCatalog, warp_need: int, profile: Profile, total_sms: Optional[int] = None
) -> int:
    """ceil(W / sm_capacity(P)), evaluated in integers."""
    if warp_need <= 0:
        return 0
    num = warp_need * catalog.total_compute_slices
    den = _sms(catalog, total_sms) * profile.compute_slices
    return -(-num // den)


def tight_fit_profile(
    catalog: PlacementCatalog,
    mem_need: int,
    warp_need: int = 0,
    total_sms: Optional[int] = None,
) -> Profile:
    """Smallest-memory profile that holds ``mem_need`` plus the CUDA context
    and keeps the same number of kernel waves as the whole GPU.

    Ties on memory go to the profile with fewer compute slices.
    """
    if mem_need < 0:
        raise ValueError("mem_need must be non-negative")
    full = catalog.full_profile
    need = mem_need + catalog.reserved_context_bytes
    if need > full.memory_bytes:
        raise NoFit(
            f"{mem_need} bytes (+{catalog.reserved_context_bytes} context) "
            f"exceeds {full.name} ({full.memory_bytes} bytes)"
        )
    if warp_need > 0:
        sms = _sms(catalog, total_sms)
        target = wave_count(catalog, warp_need, full, sms)
    for p in catalog.profiles:
        if p.memory_bytes < need:
            continue
        if warp_need > 0 and wave_count(catalog, warp_need, p, sms) != target:
            continue
        return p
    # unreachable: full profile always matches its own wave count
    return full


def slowdown(
    catalog: PlacementCatalog, warp_need: int, profile: Profile, total_sms: Optional[int]
) -> float:
    """Kernel-time multiplier of ``profile`` relative to the whole GPU."""
    if warp_need <= 0:
        return 1.0
    sms = _sms(catalog, total_sms)
    return wave_count(catalog, warp_need, profile, sms) / wave_count(
        catalog, warp_need, catalog.full_profile, sms
    )
