"""Result persistence: CSV, JSON and a small self-contained SVG chart."""
import csv
import io
import json
import logging
import math
import os
import time
import xml.etree.ElementTree as ET

logger = logging.getLogger(__name__)

TRIAL_COLUMNS = ("iter", "trial", "mse_emp", "v_ab", "v_ba", "gamma")


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def _clean(obj):
    """Replace non-finite floats by ``None`` so the JSON stays standard."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def render_csv(res):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIAL_COLUMNS)
    for tr in res.trials:
        for row in tr.rows:
            w.writerow([_fmt(row["iter"]), tr.index] + [_fmt(row[k]) for k in TRIAL_COLUMNS[2:]])
    failed = [tr for tr in res.trials if tr.failed]
    if failed:
        buf.write("\n# failed trials\n")
        w.writerow(("trial", "seed", "iteration", "error"))
        for tr in failed:
            w.writerow((tr.index, tr.seed, tr.failed_iteration, tr.error))
    if res.aggregate:
        buf.write("\n# aggregate\n")
        cols = ["iter", "n", "mse_mean", "mse_std"]
        if res.comparison:
            cols += ["se_pred", "rel_dev"]
        w.writerow(cols)
        for i, agg in enumerate(res.aggregate):
            row = dict(agg)
            if res.comparison:
                row.update(res.comparison[i])
            w.writerow([_fmt(row[c]) for c in cols])
    if res.se:
        buf.write("\n# state evolution\n")
        cols = list(res.se[0])
        w.writerow(cols)
        for row in res.se:
            w.writerow([_fmt(row[c]) for c in cols])
    if res.threshold:
        buf.write("\n# threshold sweep (axis %s)\n" % res.threshold["axis"])
        w.writerow(("value", "fp_count", "attractor_mse", "unique"))
        for row in res.threshold["rows"]:
            w.writerow((_fmt(row["value"]), row["fp_count"], _fmt(row["attractor_mse"]),
                        int(row["unique"])))
        w.writerow(("threshold", _fmt(res.threshold["threshold"])))
    return buf.getvalue()


def render_json(res):
    return json.dumps(_clean(res.to_dict()), indent=2, sort_keys=True) + "\n"


def _series(res):
    """``(name, xs, ys, color)`` tuples for the chart."""
    out = []
    if res.aggregate:
        xs = [a["iter"] for a in res.aggregate]
        mean = [a["mse_mean"] for a in res.aggregate]
        std = [a["mse_std"] for a in res.aggregate]
        out.append(("MC mean", xs, mean, "#1f77b4"))
        out.append(("MC mean + std", xs, [m + s for m, s in zip(mean, std)], "#9ecae1"))
        out.append(("MC mean - std", xs, [m - s for m, s in zip(mean, std)], "#9ecae1"))
    if res.se:
        out.append(("SE", [r["iter"] for r in res.se], [r["predicted_mse"] for r in res.se],
                    "#d62728"))
    if res.threshold:
        rows = res.threshold["rows"]
        out.append(("attractor MSE", [r["value"] for r in rows],
                    [r["attractor_mse"] for r in rows], "#2ca02c"))
    return out


def render_svg(res, width=640, height=400, margin=50):
    series = _series(res)
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width),
                     height=str(height), viewBox=f"0 0 {width} {height}")
    ET.SubElement(svg, "title").text = f"{res.mode}: MSE"
    pts = [(x, y) for _, xs, ys, _ in series for x, y in zip(xs, ys)
           if y is not None and math.isfinite(y) and y > 0]
    if not pts:
        ET.SubElement(svg, "text", x=str(margin), y=str(height // 2)).text = "no data"
        return ET.tostring(svg, encoding="unicode") + "\n"
    x_lo, x_hi = min(p[0] for p in pts), max(p[0] for p in pts)
    y_lo, y_hi = (math.log10(min(p[1] for p in pts)), math.log10(max(p[1] for p in pts)))
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def px(x):
        return margin + (x - x_lo) / x_span * (width - 2 * margin)

    def py(y):
        return height - margin - (math.log10(y) - y_lo) / y_span * (height - 2 * margin)

    ET.SubElement(svg, "rect", x=str(margin), y=str(margin), width=str(width - 2 * margin),
                  height=str(height - 2 * margin), fill="none", stroke="#444")
    if res.aggregate:
        up = [(px(a["iter"]), a["mse_mean"] + a["mse_std"]) for a in res.aggregate]
        dn = [(px(a["iter"]), a["mse_mean"] - a["mse_std"]) for a in res.aggregate]
        band = [f"{x:.2f},{py(y):.2f}" for x, y in up if y > 0]
        band += [f"{x:.2f},{py(y):.2f}" for x, y in reversed(dn) if y > 0]
        if band:
            ET.SubElement(svg, "polygon", points=" ".join(band), fill="#c6dbef",
                          opacity="0.5", stroke="none")
    for i, (name, xs, ys, color) in enumerate(series):
        coords = [f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys)
                  if y is not None and math.isfinite(y) and y > 0]
        line = ET.SubElement(svg, "polyline", points=" ".join(coords), fill="none",
                             stroke=color, **{"stroke-width": "2", "data-series": name})
        ET.SubElement(line, "title").text = name
        ET.SubElement(svg, "text", x=str(width - margin + 4), y=str(margin + 14 * i),
                      fill=color, **{"font-size": "10"}).text = name
    ET.SubElement(svg, "text", x=str(width // 2), y=str(height - 10),
                  **{"text-anchor": "middle"}).text = "sweep value" if res.threshold else "iteration"
    ET.SubElement(svg, "text", x="10", y=str(margin - 10)).text = (
        f"MSE (log10 {y_lo:.2f} .. {y_hi:.2f})")
    return ET.tostring(svg, encoding="unicode") + "\n"


RENDERERS = {"csv": render_csv, "json": render_json, "svg": render_svg}


def report_stem(res, timestamp=None):
    if timestamp is None:
        timestamp = res.meta.get("started", time.time())
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime(timestamp))
    return f"{res.mode}_{stamp}_{res.config['base_seed']}"


def emit_report(res, formats=None, output_dir=None, timestamp=None):
    """Write ``res`` in each requested format; returns the written paths."""
    formats = list(res.config["formats"] if formats is None else formats)
    if not formats:
        logger.warning("no output formats requested; nothing written")
        return []
    unknown = [f for f in formats if f not in RENDERERS]
    if unknown:
        raise ValueError(f"unknown output formats {unknown}")
    output_dir = output_dir or res.config["output_dir"]
    stem = report_stem(res, timestamp)
    paths = []
    try:
        os.makedirs(output_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {output_dir!r}: {exc}") from exc
    for fmt in dict.fromkeys(formats):
        path = os.path.join(output_dir, f"{stem}.{fmt}")
        text = RENDERERS[fmt](res)
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"failed to write {path!r}: {exc}") from exc
        paths.append(path)
    return paths
