"""Published whole-model parameter totals, keyed by backbone, resolution, classes and head."""

from __future__ import annotations

from dataclasses import dataclass

from .backbone import feature_map_spec, registry_lookup
from .heads import HeadKind, HeadSpec, head_param_count


@dataclass(frozen=True)
class PublishedCount:
    table: str
    backbone: str
    input_side: int
    classes: int
    kind: HeadKind
    pool_kernel: int | None
    expected: int

    def head_spec(self) -> HeadSpec:
        return HeadSpec(self.kind, self.classes, self.pool_kernel)

    def computed(self) -> tuple[int, int]:
        entry = registry_lookup(self.backbone)
        fm = feature_map_spec(entry, self.input_side)
        head = head_param_count(fm, self.head_spec())
        return entry.base_params, head


G, DW, DWN, ADW, AFC = (
    HeadKind.GAP,
    HeadKind.DW,
    HeadKind.DW_NONNEG,
    HeadKind.AVG_DW_NONNEG,
    HeadKind.AVG_FLATTEN_FC,
)


def _rows(table, side, classes, pool, spec):
    return [PublishedCount(table, bb, side, classes, kind, pool if kind.pooled else None, n)
            for bb, kind, n in spec]


PUBLISHED: list[PublishedCount] = (
    _rows("cost table (K=70, 224)", 224, 70, 2, [
        ("resnet50", G, 23_731_142), ("resnet50", DW, 23_833_542), ("resnet50", ADW, 23_751_622),
        ("xception", G, 21_004_910), ("xception", DW, 21_107_310), ("xception", ADW, 21_025_390),
        ("densenet121", G, 7_109_254), ("densenet121", DW, 7_160_454), ("densenet121", ADW, 7_119_494),
    ])
    + _rows("intel (K=6, 224)", 224, 6, 2, [
        ("xception", G, 20_873_774), ("xception", DWN, 20_976_174), ("xception", ADW, 20_894_254),
        ("resnet50", G, 23_600_006), ("resnet50", DWN, 23_702_406), ("resnet50", ADW, 23_620_486),
        ("densenet169", G, 12_652_870), ("densenet169", DWN, 12_736_070), ("densenet169", ADW, 12_669_510),
    ])
    + _rows("mit indoors (K=67, 224)", 224, 67, 2, [
        ("xception", G, 20_998_763), ("xception", DWN, 21_101_163), ("xception", ADW, 21_019_243),
        ("resnet50", G, 23_724_995), ("resnet50", DWN, 23_827_395), ("resnet50", ADW, 23_745_475),
        ("densenet169", G, 12_754_435), ("densenet169", DWN, 12_837_635), ("densenet169", ADW, 12_771_075),
    ])
    + _rows("mit indoors (K=67, 512)", 512, 67, 3, [
        ("xception", G, 20_998_763), ("xception", AFC, 24_291_947), ("xception", ADW, 21_052_011),
        ("resnet50v2", G, 23_702_083), ("resnet50v2", AFC, 26_995_267), ("resnet50v2", ADW, 23_755_331),
        ("densenet201", G, 18_450_691), ("densenet201", AFC, 21_538_051), ("densenet201", ADW, 18_500_611),
    ])
)


def check_all() -> list[tuple[PublishedCount, int, int, bool]]:
    """``(row, base, head, ok)`` per published total."""
    out = []
    for row in PUBLISHED:
        base, head = row.computed()
        out.append((row, base, head, base + head == row.expected))
    return out
