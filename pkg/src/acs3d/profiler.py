"""Per-layer and whole-model cost accounting.

MACs count one multiply-accumulate per kernel element per output element,
so for cubic kernels a full 3D convolution costs exactly K times an ACS
convolution and a mean-ACS convolution costs exactly 3 times one.
Activation memory counts the output elements each layer materializes
(3x for the mean/soft variants, which hold three view maps); the model
peak is the maximum over layers. Bias elements are tallied separately and
excluded from the parameter totals.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import GraphError
from .graph import _node_out_shape, infer_shapes


@dataclass(frozen=True)
class CostRecord:
    name: str
    kind: str
    macs: int
    params: int
    bias_params: int
    activation_elems: int


@dataclass(frozen=True)
class CostReport:
    records: tuple
    total_macs: int
    total_params: int
    total_bias_params: int
    peak_activation_elems: int

    @staticmethod
    def from_records(records):
        records = tuple(records)
        return CostReport(
            records=records,
            total_macs=sum(r.macs for r in records),
            total_params=sum(r.params for r in records),
            total_bias_params=sum(r.bias_params for r in records),
            peak_activation_elems=max((r.activation_elems for r in records), default=0),
        )


def _prod(extents):
    return int(np.prod(extents, dtype=np.int64)) if len(extents) else 1


def layer_cost(node, input_shapes, dim):
    """Cost record for one node given its input shape(s) (batch included)."""
    if isinstance(input_shapes[0], (int, np.integer)):
        input_shapes = [tuple(input_shapes)]
    input_shapes = [tuple(s) for s in input_shapes]
    try:
        out_shape = _node_out_shape(node, dim, input_shapes)
    except Exception as exc:
        raise GraphError(f"node {node.name!r}: {exc}") from exc
    a = node.attrs
    out_elems = _prod(out_shape)
    k = node.kind
    macs = out_elems
    params = 0
    bias_params = 0
    activation = out_elems
    if k == "conv_kxk":
        params = a["out_ch"] * a["in_ch"] * a["k"] ** 2
        macs = out_elems * a["in_ch"] * a["k"] ** 2
        bias_params = a["out_ch"] if a["bias"] else 0
    elif k == "conv_1x1":
        params = a["out_ch"] * a["in_ch"]
        macs = out_elems * a["in_ch"]
        bias_params = a["out_ch"] if a["bias"] else 0
    elif k == "conv3d":
        kvol = _prod(a["k"])
        params = a["out_ch"] * a["in_ch"] * kvol
        macs = out_elems * a["in_ch"] * kvol
        bias_params = a["out_ch"] if a["bias"] else 0
    elif k == "acs_conv":
        params = a["out_ch"] * a["in_ch"] * a["k"] ** 2
        macs = out_elems * a["in_ch"] * a["k"] ** 2
        bias_params = a["out_ch"] if a.get("bias") else 0
    elif k == "mean_acs_conv":
        params = a["out_ch"] * a["in_ch"] * a["k"] ** 2
        macs = 3 * out_elems * a["in_ch"] * a["k"] ** 2
        activation = 3 * out_elems
    elif k == "soft_acs_conv":
        params = a["out_ch"] * a["in_ch"] * a["k"] ** 2 + 3
        macs = 3 * out_elems * a["in_ch"] * a["k"] ** 2 + 3 * out_elems
        activation = 3 * out_elems
    elif k == "batchnorm":
        params = 2 * a["ch"]
    elif k == "linear":
        params = a["out_features"] * a["in_features"]
        macs = out_elems * a["in_features"]
        bias_params = a["out_features"] if a["bias"] else 0
    # pooling/norm-free elementwise kinds keep macs = params-free output count
    return CostRecord(node.name, k, int(macs), int(params), int(bias_params), int(activation))


def model_cost(g, input_shape):
    """Per-layer records in topological order plus aggregate totals."""
    shapes = infer_shapes(g, input_shape)
    records = []
    for node in g.nodes:
        records.append(layer_cost(node, [shapes[i] for i in node.inputs], g.dim))
    return CostReport.from_records(records)


def compare_reports(a, b, label_a="a", label_b="b"):
    """Aggregate ratios between two reports (b relative to a)."""
    def ratio(x, y):
        return float(y) / float(x) if x else float("nan")

    return {
        "labels": [label_a, label_b],
        "macs": [a.total_macs, b.total_macs, ratio(a.total_macs, b.total_macs)],
        "params": [a.total_params, b.total_params, ratio(a.total_params, b.total_params)],
        "peak_activation_elems": [
            a.peak_activation_elems,
            b.peak_activation_elems,
            ratio(a.peak_activation_elems, b.peak_activation_elems),
        ],
    }


def format_table(report):
    """Aligned text rendering of a cost report."""
    headers = ("layer", "kind", "macs", "params", "bias", "act_elems")
    rows = [
        (r.name, r.kind, str(r.macs), str(r.params), str(r.bias_params), str(r.activation_elems))
        for r in report.records
    ]
    rows.append(("TOTAL", "", str(report.total_macs), str(report.total_params),
                 str(report.total_bias_params), f"peak {report.peak_activation_elems}"))
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


def report_to_json(report):
    """Structured rendering (same document style as the model files)."""
    return json.dumps(
        {
            "version": 1,
            "layers": [
                {"name": r.name, "kind": r.kind, "macs": r.macs, "params": r.params,
                 "bias_params": r.bias_params, "activation_elems": r.activation_elems}
                for r in report.records
            ],
            "totals": {
                "macs": report.total_macs,
                "params": report.total_params,
                "bias_params": report.total_bias_params,
                "peak_activation_elems": report.peak_activation_elems,
            },
        },
        indent=2,
    )
