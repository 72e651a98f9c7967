"""Pluggable feature and matcher providers.

The engine never runs neural networks itself; anything that would need
pixels is routed through a :class:`ProviderBundle`.  The defaults here are
hermetic stand-ins that work on manifest data alone, so the full cascade is
testable without any model runtime.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from .errors import DataFormatError, ValidationError
from .geometry import PatchBox
from .matching import FeatureVector, mutual_nearest_neighbors
from .records import SceneRecord

# Matches below this cosine are not counted by the built-in fine matcher.
# Fixed on purpose: the built-in matcher is a stand-in, not a tunable model.
FINE_MATCH_MIN_COSINE = 0.9

PatchFeatureProvider = Callable[[SceneRecord, Sequence[PatchBox]], List[FeatureVector]]
FineMatcher = Callable[[SceneRecord, SceneRecord], int]


@dataclass(frozen=True)
class ProviderBundle:
    """The two injection points of the cascade.

    ``thread_safe`` declares whether the callables may run concurrently;
    the engine serializes calls to bundles that say they are not.
    """

    patch_feature_provider: PatchFeatureProvider
    fine_matcher: FineMatcher
    thread_safe: bool = True


def composite_patch_features(
    record: SceneRecord, patches: Sequence[PatchBox]
) -> List[FeatureVector]:
    """Patch features modeled as the mean feature of everything inside.

    A real deployment would crop the image and run a backbone; here the
    patch crop "sees" every detected object whose box lies inside the patch
    box, regardless of detection confidence, because thresholding detections
    does not remove pixels from an image.  Each patch contains at least its
    seed object, so the mean is never empty.
    """
    out: List[FeatureVector] = []
    for patch in patches:
        inside = [o.feature.values for o in record.objects if patch.box.contains(o.box)]
        if not inside:
            raise ValidationError(
                f"patch seeded by object {patch.seed_index} of {record.image_id!r} contains no objects"
            )
        out.append(FeatureVector(np.mean(np.stack(inside), axis=0)))
    return out


def builtin_fine_matcher(q: SceneRecord, r: SceneRecord) -> int:
    """Count confident mutual-nearest-neighbor keypoint matches.

    A mutual pair counts only when its cosine reaches
    ``FINE_MATCH_MIN_COSINE``; either side having no descriptors gives 0.
    """
    if not q.keypoint_descriptors or not r.keypoint_descriptors:
        return 0
    matches = mutual_nearest_neighbors(q.keypoint_descriptors, r.keypoint_descriptors)
    return sum(1 for _, _, s in matches.pairs if s >= FINE_MATCH_MIN_COSINE)


def default_bundle() -> ProviderBundle:
    return ProviderBundle(
        patch_feature_provider=composite_patch_features,
        fine_matcher=builtin_fine_matcher,
        thread_safe=True,
    )


class MatchCountTable:
    """Precomputed pairwise fine-match counts, loaded from the sidecar
    table the exporter writes.

    File format (one header line, then one row per pair):

        # match-counts/1
        <query_image_id>\t<reference_image_id>\t<count>
    """

    HEADER = "# match-counts/1"

    def __init__(self, counts: Dict[Tuple[str, str], int]):
        self._counts = dict(counts)

    @classmethod
    def load(cls, path: Path | str) -> "MatchCountTable":
        path = Path(path)
        if not path.is_file():
            raise DataFormatError(f"match-count table not found: {path}")
        lines = path.read_text(encoding="utf-8").splitlines()
        if not lines or lines[0].strip() != cls.HEADER:
            raise DataFormatError(f"match-count table {path} is missing the {cls.HEADER!r} header")
        counts: Dict[Tuple[str, str], int] = {}
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
            try:
                count = int(parts[2])
            except ValueError as e:
                raise DataFormatError(f"{path}:{lineno}: count is not an integer") from e
            if count < 0:
                raise DataFormatError(f"{path}:{lineno}: count must be nonnegative")
            counts[(parts[0], parts[1])] = count
        return cls(counts)

    def __len__(self) -> int:
        return len(self._counts)

    def matcher(self) -> FineMatcher:
        """A fine matcher that looks pairs up instead of computing them."""

        def match(q: SceneRecord, r: SceneRecord) -> int:
            key = (q.image_id, r.image_id)
            if key not in self._counts:
                raise ValidationError(
                    f"match-count table has no entry for query {q.image_id!r} "
                    f"vs reference {r.image_id!r}"
                )
            return self._counts[key]

        return match


def write_match_count_table(
    path: Path | str, rows: Sequence[Tuple[str, str, int]]
) -> None:
    """Write the sidecar table format; rows are emitted in the given order."""
    path = Path(path)
    lines = [MatchCountTable.HEADER]
    for q, r, c in rows:
        lines.append(f"{q}\t{r}\t{int(c)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
