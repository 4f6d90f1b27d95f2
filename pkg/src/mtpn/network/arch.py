"""Stage tables for the two backbones."""

# (blocks, bottleneck width, first-block stride); output channels are 4x width.
RESNET50_STAGES = ((3, 64, 1), (4, 128, 2), (6, 256, 2), (3, 512, 2))
RESNET_EXPANSION = 4
RESNET_STEM = 64

# (expansion t, output channels c, repeats n, first stride s)
MOBILENETV2_SETTINGS = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)
MOBILENETV2_STEM = 32
MOBILENETV2_LAST = 1280
# Settings rows whose output feeds pyramid levels c2, c3, c4; c5 is the last 1x1 conv.
MOBILENETV2_TAPS = {1: "c2", 2: "c3", 4: "c4"}


def pyramid_channels(backbone: str) -> dict[str, int]:
    if backbone == "resnet50":
        return {f"c{i + 2}": w * RESNET_EXPANSION for i, (_, w, _) in enumerate(RESNET50_STAGES)}
    chans = {name: MOBILENETV2_SETTINGS[row][1] for row, name in MOBILENETV2_TAPS.items()}
    chans["c5"] = MOBILENETV2_LAST
    return chans
