"""A small encoder-decoder segmentation graph used by tests and the CLI.

Every body node lives under the "u." name prefix so that weight-transfer
scopes can address the whole body ("u."), the encoder only ("u.enc"), or
nothing, while the "head" 1x1 projection keeps its own name (its channel
count may differ between source and target tasks).
"""

from .graph import LayerNode, ModelGraph


def _conv_block(nodes, prefix, idx, in_ch, out_ch, src):
    name = f"{prefix}.conv{idx}"
    nodes.append(LayerNode(name, "conv_kxk",
                           {"k": 3, "stride": 1, "padding": 1, "dilation": 1,
                            "in_ch": in_ch, "out_ch": out_ch, "bias": False}, (src,)))
    nodes.append(LayerNode(f"{prefix}.bn{idx}", "batchnorm",
                           {"ch": out_ch, "eps": 1e-5, "momentum": 0.1}, (name,)))
    nodes.append(LayerNode(f"{prefix}.relu{idx}", "relu", {}, (f"{prefix}.bn{idx}",)))
    return f"{prefix}.relu{idx}"


def _stage(nodes, prefix, in_ch, out_ch, src):
    src = _conv_block(nodes, prefix, 1, in_ch, out_ch, src)
    return _conv_block(nodes, prefix, 2, out_ch, out_ch, src)


def build_unet2d(in_ch=1, out_ch=2, base=8, levels=3):
    """3-level-by-default UNet with batchnorm, max pooling, and skip concats."""
    if levels < 2:
        raise ValueError("levels must be >= 2")
    nodes = []
    skips = []
    src = "x"
    width = base
    widths = []
    for lv in range(1, levels):
        cin = in_ch if lv == 1 else widths[-1]
        src = _stage(nodes, f"u.enc{lv}", cin, width, src)
        skips.append((src, width))
        widths.append(width)
        nodes.append(LayerNode(f"u.pool{lv}", "maxpool",
                               {"k": 2, "stride": 2, "padding": 0}, (src,)))
        src = f"u.pool{lv}"
        width *= 2
    src = _stage(nodes, "u.bott", widths[-1], width, src)
    up_width = width
    for lv in range(levels - 1, 0, -1):
        skip_src, skip_width = skips[lv - 1]
        nodes.append(LayerNode(f"u.up{lv}", "upsample_nearest", {"factor": 2}, (src,)))
        nodes.append(LayerNode(f"u.cat{lv}", "concat", {}, (f"u.up{lv}", skip_src)))
        src = _stage(nodes, f"u.dec{lv}", up_width + skip_width, skip_width, f"u.cat{lv}")
        up_width = skip_width
    nodes.append(LayerNode("head", "conv_1x1",
                           {"in_ch": up_width, "out_ch": out_ch, "bias": True}, (src,)))
    return ModelGraph("2D", tuple(nodes), "x", ("head",))


def feature_node(g):
    """The node feeding the head: its output is the final feature map."""
    return g.node(g.outputs[0]).inputs[0]


def with_head_channels(g, out_ch):
    """Same graph with the head's output channel count replaced."""
    nodes = []
    for node in g.nodes:
        if node.name == g.outputs[0]:
            attrs = dict(node.attrs)
            attrs["out_ch"] = out_ch
            nodes.append(LayerNode(node.name, node.kind, attrs, node.inputs))
        else:
            nodes.append(node)
    return ModelGraph(g.dim, tuple(nodes), g.input, g.outputs)
