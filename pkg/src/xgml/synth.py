"""Synthetic cohorts with planted edge -> outcome signal and group severity.

Generative model, per subject ``s`` and region ``r``::

    intensity = loc_r + scale_{s,r} * mixture_r

``mixture_r`` is a fixed two-component Gaussian mixture per region.
``log scale_{s,r}`` is a per-subject nuisance draw.  For each planted edge
``(a, b)`` the two endpoints share their nuisance draw and mixture shape,
and a latent subject factor ``z ~ U(0, 1)`` pushes them apart
(``+coupling*z`` on ``a``, ``-coupling*z`` on ``b``).  The a-b distance
then tracks ``z`` while the endpoints' other edges stay nuisance-dominated.
Each outcome driven by the edge gains ``effect_size * z``; every outcome
also gets Gaussian noise, and outcomes not driven by any edge are pure noise.

Severity: a fixed ordering of the non-planted regions by vulnerability; in
group CN/MCI/AD the first 5%/20%/50% of that ordering get their log-scale
raised by ``severity_shift``.  Edges between affected and unaffected
regions become large, so the normalized group mean distance grows with
severity.  ``planted_severity`` separately widens the first endpoint of
every planted edge by 0, 0.5 and 1 times its value in CN, MCI and AD.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._config import parse_config_text
from .exceptions import InvalidSpec
from .ingest import (
    GROUPS,
    OUTCOMES,
    AtlasEntry,
    AtlasTable,
    CohortManifest,
    ManifestSubject,
    RoiSamples,
    VoxelVolume,
    YEO_NETWORKS,
    write_atlas_table,
    write_manifest,
    write_scores,
    write_volume,
)

AFFECTED_FRACTION = {"CN": 0.05, "MCI": 0.20, "AD": 0.50}
PLANTED_SEVERITY_WEIGHT = {"CN": 0.0, "MCI": 0.5, "AD": 1.0}


@dataclass(frozen=True)
class PlantedEdge:
    edge: tuple[int, int]  # 0-based region positions
    outcomes: tuple[int, ...]  # outcome column indices
    effect_size: float = 10.0  # outcome change per unit of the latent factor


@dataclass
class SynthSpec:
    n_subjects: dict = field(default_factory=lambda: {"CN": 20, "MCI": 20, "AD": 20})
    k: int = 20
    voxels_per_region: tuple[int, int] = (400, 520)
    planted_edges: list = field(default_factory=list)
    severity_shift: float = 0.8
    coupling: float = 0.4
    nuisance_sd: float = 0.15
    outcome_noise: float = 1.0
    seed: int = 0
    planted_severity: float = 0.0

    def validate(self):
        if self.k < 2:
            raise InvalidSpec("need at least 2 regions")
        if any(g not in GROUPS or n < 0 for g, n in self.n_subjects.items()):
            raise InvalidSpec(f"invalid group sizes {self.n_subjects}")
        lo, hi = self.voxels_per_region
        if not 1 <= lo <= hi:
            raise InvalidSpec("voxels_per_region must satisfy 1 <= lo <= hi")
        used = set()
        for pe in self.planted_edges:
            a, b = pe.edge
            if not (0 <= a < self.k and 0 <= b < self.k and a != b):
                raise InvalidSpec(f"planted edge {pe.edge} outside the {self.k}-region graph")
            if {a, b} & used:
                raise InvalidSpec("planted edges must not share regions")
            used |= {a, b}
            if not math.isfinite(pe.effect_size):
                raise InvalidSpec("effect sizes must be finite")
            if any(not 0 <= o < len(OUTCOMES) for o in pe.outcomes):
                raise InvalidSpec(f"outcome index out of range in {pe}")
        for v in (self.severity_shift, self.planted_severity, self.coupling, self.nuisance_sd, self.outcome_noise):
            if not math.isfinite(v) or v < 0:
                raise InvalidSpec("shift, coupling and noise parameters must be finite and >= 0")
        if self.seed < 0:
            raise InvalidSpec("seed must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["voxels_per_region"] = list(self.voxels_per_region)
        d["planted_edges"] = [
            {"edge": list(p.edge), "outcomes": list(p.outcomes), "effect_size": p.effect_size}
            for p in self.planted_edges
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        d["planted_edges"] = [
            PlantedEdge(tuple(p["edge"]), tuple(p["outcomes"]), float(p.get("effect_size", 10.0)))
            for p in d.get("planted_edges", [])
        ]
        if "voxels_per_region" in d:
            d["voxels_per_region"] = tuple(d["voxels_per_region"])
        try:
            spec = cls(**d)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from exc
        spec.validate()
        return spec


def load_spec(path) -> SynthSpec:
    path = Path(path)
    text = path.read_text()
    return SynthSpec.from_dict(parse_config_text(text, path.suffix))


def default_spec(seed=0, severity_shift=0.8) -> SynthSpec:
    """20 regions, 60 subjects, three planted edges on the first three outcomes."""
    return SynthSpec(
        planted_edges=[
            PlantedEdge((3, 17), (0,)),
            PlantedEdge((5, 11), (1,)),
            PlantedEdge((8, 14), (2,)),
        ],
        severity_shift=severity_shift,
        seed=seed,
    )


@dataclass
class SynthSubject:
    subject_id: str
    group: str
    regions: list  # list[RoiSamples]
    latent: np.ndarray


@dataclass
class SynthCohort:
    spec: SynthSpec
    subjects: list
    scores: dict
    table: AtlasTable
    region_voxels: np.ndarray

    @property
    def subject_ids(self):
        return [s.subject_id for s in self.subjects]

    @property
    def groups(self):
        return [s.group for s in self.subjects]

    def score_matrix(self) -> np.ndarray:
        return np.vstack([self.scores[s] for s in self.subject_ids])

    def signal_outcomes(self) -> list[int]:
        return sorted({o for pe in self.spec.planted_edges for o in pe.outcomes})


def _edge_feature(a, b, k):
    a, b = min(a, b), max(a, b)
    return a * k - a * (a + 1) // 2 + (b - a - 1)


def planted_features(spec: SynthSpec) -> dict:
    """``{outcome index: [feature index, ...]}`` for the planted edges."""
    out = {}
    for pe in spec.planted_edges:
        for o in pe.outcomes:
            out.setdefault(o, []).append(_edge_feature(*pe.edge, spec.k))
    return out


def _synthetic_table(k, rng):
    entries = []
    for r in range(k):
        hemi = "L" if r < k / 2 else "R"
        net = YEO_NETWORKS[r % len(YEO_NETWORKS)]
        entries.append(AtlasEntry(r + 1, f"synth_{hemi}H_{net}_{r + 1}", hemi, net))
    return AtlasTable(entries)


def generate_cohort(spec: SynthSpec) -> SynthCohort:
    """Draw a reproducible cohort; per-subject streams come from the master seed."""
    spec.validate()
    k = spec.k
    master = np.random.SeedSequence(spec.seed)
    region_ss, subject_ss = master.spawn(2)
    rrng = np.random.default_rng(region_ss)
    lo, hi = spec.voxels_per_region
    voxels = rrng.integers(lo, hi + 1, size=k)
    loc = rrng.uniform(0.9, 1.3, size=k)
    base_scale = rrng.uniform(0.08, 0.10, size=k)
    weight = rrng.uniform(0.55, 0.75, size=k)
    sep = rrng.uniform(2.0, 3.0, size=k)
    sd2 = rrng.uniform(0.6, 0.9, size=k)
    planted_regions = {r for pe in spec.planted_edges for r in pe.edge}
    twin = {}
    for pe in spec.planted_edges:
        a, b = pe.edge
        twin[b] = a
        # b is a's twin in shape, so only the latent factor separates them
        for arr in (loc, base_scale, weight, sep, sd2):
            arr[b] = arr[a]
    vulnerable = [r for r in rrng.permutation(k) if r not in planted_regions]
    table = _synthetic_table(k, rrng)

    group_labels = [g for g in GROUPS for _ in range(spec.n_subjects.get(g, 0))]
    n = len(group_labels)
    n_latent = len(spec.planted_edges)
    streams = subject_ss.spawn(n)
    subjects, scores = [], {}
    for s, (g, ss) in enumerate(zip(group_labels, streams)):
        rng = np.random.default_rng(ss)
        z = rng.uniform(0.0, 1.0, size=n_latent)
        log_scale = rng.normal(0.0, spec.nuisance_sd, size=k)
        for b, a in twin.items():
            log_scale[b] = log_scale[a]
        for e, pe in enumerate(spec.planted_edges):
            a, b = pe.edge
            log_scale[a] += spec.coupling * z[e]
            log_scale[b] -= spec.coupling * z[e]
        n_aff = int(round(AFFECTED_FRACTION[g] * len(vulnerable)))
        for r in vulnerable[:n_aff]:
            log_scale[r] += spec.severity_shift
        for pe in spec.planted_edges:
            log_scale[pe.edge[0]] += spec.planted_severity * PLANTED_SEVERITY_WEIGHT[g]
        regions = []
        for r in range(k):
            m = int(voxels[r])
            comp = rng.random(m) >= weight[r]
            draw = rng.standard_normal(m)
            mix = np.where(comp, sep[r] + sd2[r] * draw, draw)
            vals = loc[r] + base_scale[r] * math.exp(log_scale[r]) * mix
            # float32 so in-memory cohorts equal what the volume container stores
            regions.append(RoiSamples(r + 1, vals.astype(np.float32).astype(np.float64)))
        y = rng.normal(0.0, spec.outcome_noise, size=len(OUTCOMES))
        for e, pe in enumerate(spec.planted_edges):
            for o in pe.outcomes:
                y[o] += pe.effect_size * z[e]
        sid = f"sub-{s + 1:03d}"
        scores[sid] = y
        subjects.append(SynthSubject(sid, g, regions, z))
    return SynthCohort(spec, subjects, scores, table, voxels)


def _grid_dims(total: int) -> tuple[int, int, int]:
    side = max(2, math.ceil(total ** (1 / 3)))
    nz = max(1, math.ceil(total / (side * side)))
    return side, side, nz


def atlas_volume(cohort: SynthCohort) -> VoxelVolume:
    """Label volume: region r occupies a contiguous run of flat indices, rest is background."""
    total = int(cohort.region_voxels.sum())
    dims = _grid_dims(total)
    labels = np.zeros(math.prod(dims), dtype=np.int32)
    labels[:total] = np.repeat(np.arange(1, cohort.spec.k + 1, dtype=np.int32), cohort.region_voxels)
    return VoxelVolume(dims, (1.5, 1.5, 1.5), labels, "label")


def scan_volume(subject: SynthSubject, atlas: VoxelVolume) -> VoxelVolume:
    data = np.zeros(atlas.data.size, dtype=np.float32)
    values = np.concatenate([r.values for r in subject.regions]).astype(np.float32)
    data[: values.size] = values
    return VoxelVolume(atlas.dims, atlas.spacing, data, "intensity")


def write_cohort(cohort: SynthCohort, out_dir) -> Path:
    """Write volumes, atlas table, scores CSV, spec and manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    atlas = atlas_volume(cohort)
    write_volume(atlas, out / "atlas.vol")
    write_atlas_table(cohort.table, out / "atlas.tsv")
    write_scores(cohort.scores, out / "scores.csv")
    subjects = []
    for s in cohort.subjects:
        path = out / "scans" / f"{s.subject_id}.vol"
        write_volume(scan_volume(s, atlas), path)
        subjects.append(ManifestSubject(s.subject_id, path, s.group))
    (out / "synth_spec.json").write_text(json.dumps(cohort.spec.to_dict(), indent=2, sort_keys=True))
    manifest = CohortManifest(subjects, out / "scores.csv", out / "atlas.vol", out / "atlas.tsv")
    write_manifest(manifest, out / "manifest.json")
    return out / "manifest.json"
