"""The 52-architecture classification as static data.

Flags: ``yes``, ``no``, ``partial`` (constant-factor gain only) or ``base``
(engineering method that inherits its base architecture's row).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .bounds import Affine, ArchDescriptor

Y, N, P, B = "yes", "no", "partial", "base"


@dataclass(frozen=True)
class TaxonomyRow:
    index: int
    name: str
    year: str
    category: str
    eff: str
    comp: str
    rec: str
    region: str

    @property
    def unambiguous(self) -> bool:
        return all(f in (Y, N) for f in (self.eff, self.comp, self.rec))

    def descriptor(self) -> ArchDescriptor:
        """Affine meters implied by the flags (unit slopes for violated properties)."""
        if not self.unambiguous:
            raise ValueError(f"row {self.index} ({self.name}) has partial or inherited flags")
        return ArchDescriptor(
            name=self.name,
            state_bits=Affine(1.0, 0.0 if self.comp == Y else 1.0),
            step_flops=Affine(1.0, 0.0 if self.eff == Y else 1.0),
            strong_rec=self.rec == Y,
        )


_ROWS = [
    (1, "Transformer / MHA", "2017", "Attention", N, N, Y, "Rec"),
    (2, "Multi-Query Attention", "2019", "Attention", N, P, Y, "Rec"),
    (3, "Grouped-Query Attention", "2023", "Attention", N, P, Y, "Rec"),
    (4, "Multi-Latent Attention", "2024", "Attention", N, P, Y, "Rec"),
    (5, "FlashAttention 1/2/3", "2022-24", "Attention", P, N, Y, "Rec"),
    (6, "Memorizing Transformer", "2022", "Memory", P, N, Y, "Rec"),
    (7, "Ring Attention", "2023", "Engineering", N, N, Y, "Rec"),
    (8, "S4", "2021", "SSM", Y, Y, N, "EffComp"),
    (9, "S4D / DSS", "2022", "SSM", Y, Y, N, "EffComp"),
    (10, "S5", "2022", "SSM", Y, Y, N, "EffComp"),
    (11, "H3", "2022", "SSM", Y, Y, N, "EffComp"),
    (12, "Hyena", "2023", "SSM", Y, Y, N, "EffComp"),
    (13, "Mamba (S6)", "2023", "SSM", Y, Y, N, "EffComp"),
    (14, "Mamba-2 (SSD)", "2024", "SSM", Y, Y, N, "EffComp"),
    (15, "Mamba-3", "2026", "SSM", Y, Y, N, "EffComp"),
    (16, "Linear Transformer", "2020", "Linear RNN", Y, Y, N, "EffComp"),
    (17, "Performer", "2020", "Linear RNN", Y, Y, N, "EffComp"),
    (18, "cosFormer", "2022", "Linear RNN", Y, Y, N, "EffComp"),
    (19, "RWKV-4", "2023", "Linear RNN", Y, Y, N, "EffComp"),
    (20, "RWKV-5/6", "2024", "Linear RNN", Y, Y, N, "EffComp"),
    (21, "RWKV-7", "2025", "Linear RNN", Y, Y, N, "EffComp"),
    (22, "RetNet", "2023", "Linear RNN", Y, Y, N, "EffComp"),
    (23, "GLA", "2023", "Linear RNN", Y, Y, N, "EffComp"),
    (24, "HGRN / HGRN2", "2023-24", "Linear RNN", Y, Y, N, "EffComp"),
    (25, "DeltaNet", "2024", "Linear RNN", Y, Y, N, "EffComp"),
    (26, "Gated DeltaNet", "2025", "Linear RNN", Y, Y, N, "EffComp"),
    (27, "Kimi Linear", "2025", "Linear RNN", Y, Y, N, "EffComp"),
    (28, "MinGRU / MinLSTM", "2024", "Linear RNN", Y, Y, N, "EffComp"),
    (29, "Gated Slot Attention", "2024", "Linear RNN", Y, Y, N, "EffComp"),
    (30, "xLSTM (sLSTM + mLSTM)", "2024", "Ext. LSTM", Y, Y, N, "EffComp"),
    (31, "MEGA", "2022", "Ext. LSTM", Y, Y, N, "EffComp"),
    (32, "MEGALODON", "2024", "Ext. LSTM", Y, Y, N, "EffComp"),
    (33, "Longformer", "2020", "Sparse Attn", Y, Y, N, "EffComp"),
    (34, "BigBird", "2020", "Sparse Attn", Y, Y, N, "EffComp"),
    (35, "StreamingLLM", "2023", "Sparse Attn", Y, Y, N, "EffComp"),
    (36, "LM-Infinite", "2023", "Sparse Attn", Y, Y, N, "EffComp"),
    (37, "infinity-former", "2021", "Memory", Y, Y, N, "EffComp"),
    (38, "Infini-Attention", "2024", "Memory", Y, Y, N, "EffComp"),
    (39, "Titans", "2025", "Memory", Y, Y, N, "EffComp"),
    (40, "TTT-Linear/MLP", "2024", "Memory", Y, Y, N, "EffComp"),
    (41, "Jamba / Jamba-1.5", "2024", "Hybrid", P, P, Y, "Interior"),
    (42, "Zamba / Zamba-2", "2024-25", "Hybrid", P, P, Y, "Interior"),
    (43, "StripedHyena / SH2", "2023-25", "Hybrid", P, P, Y, "Interior"),
    (44, "Nemotron-H", "2025", "Hybrid", P, P, Y, "Interior"),
    (45, "MiniMax-01", "2025", "Hybrid", P, P, Y, "Interior"),
    (46, "Griffin / RecurrentGemma", "2024", "Hybrid", Y, Y, N, "EffComp"),
    (47, "Samba", "2024", "Hybrid", Y, Y, N, "EffComp"),
    (48, "YaRN / LongRoPE", "2023-25", "Engineering", B, B, B, "-"),
    (49, "Sequence Parallelism", "2021-24", "Engineering", B, B, B, "-"),
    (50, "Landmark Attention", "2023", "Engineering", B, B, B, "-"),
    (51, "Self-Extend", "2024", "Engineering", B, B, B, "-"),
    (52, "Native Sparse Attention", "2025", "Engineering", B, B, B, "-"),
]

TAXONOMY: tuple[TaxonomyRow, ...] = tuple(TaxonomyRow(*r) for r in _ROWS)

CSV_COLUMNS = ("index", "name", "year", "category", "eff", "comp", "rec", "region")


def to_csv(rows=TAXONOMY) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r.index, r.name, r.year, r.category, r.eff, r.comp, r.rec, r.region])
    return buf.getvalue()
