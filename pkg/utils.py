import csv
import io
import json
import math
from os                         import makedirs
from os.path                    import dirname, join

import matplotlib
matplotlib.use("Agg")
from matplotlib                 import pyplot as plt

import settings

# Returns a path relative to the project directory
def get_rel_path(*rel_path):
    return join(settings.BASE_DIR, *rel_path)


# Creates the parent directory of a file path if it does not exist yet
def ensure_parent_dir(path):
    parent = dirname(path)
    if parent:
        makedirs(parent, exist_ok=True)



### JSON Helpers ###
def get_json_path(fname):
    return get_rel_path("assets", "json", f"{fname}.json")

# Retrieve json contents based on path URL
# If file is not a valid JSON document, return an empty dictionary
# If file cannot be opened, throws an error
def get_json_data(path):
    with open(path, "r") as json_file:
        try:
            json_data = json.load(json_file)
        except json.JSONDecodeError:
            json_data = {}

    return json_data

# Modify json contents stored at path URL
# If file cannot be opened, throws an error
def set_json_data(path, json_data):
    ensure_parent_dir(path)
    with open(path, "w") as json_file:
        json.dump(json_data, json_file, indent=4, sort_keys=True)
        json_file.write("\n")



### CSV Helpers ###
# Writes a header row and the given rows; "\n" line endings so that reports
# are byte-identical across platforms
def set_csv_rows(path, header, rows=()):
    ensure_parent_dir(path)
    with open(path, "w", newline="") as csv_file:
        writer = csv.writer(csv_file, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)

# Returns every row of a CSV file as a list of dictionaries keyed by header
def get_csv_rows(path):
    with open(path, "r", newline="") as csv_file:
        return list(csv.DictReader(csv_file))



### Graph Helpers ###
def _style_axes(axes, graph_color):
    axes.spines.top.set_visible(False)
    axes.spines.right.set_visible(False)
    # Modify colors to be light and dark mode friendly
    axes.spines.bottom.set_color(graph_color)
    axes.spines.left.set_color(graph_color)
    axes.xaxis.label.set_color(graph_color)
    axes.yaxis.label.set_color(graph_color)
    axes.tick_params(colors=graph_color, which="both")

def _to_buffer():
    buf = io.BytesIO()
    plt.savefig(buf, transparent=True)
    buf.seek(0)
    return buf

def create_simple_graph(title, values=(), xlim=(), ylim=(), xlabel=None, ylabel=None,
                        graph_color="#777", gradient=True, **kwargs):
    plt.clf()
    plt.title(title)
    axes = plt.gca()
    _style_axes(axes, graph_color)

    if len(xlim) > 0: axes.set_xlim(*xlim)
    if len(ylim) > 0: axes.set_ylim(*ylim)
    if xlabel: axes.set_xlabel(xlabel)
    if ylabel: axes.set_ylabel(ylabel)

    values = list(values)
    line = plt.plot(values, **kwargs)[0]

    if gradient and values:
        steps = len(values)
        plt.fill_between(x=range(steps), y1=values, y2=[min(values)] * steps,
                         facecolor=line.get_color(), alpha=0.2)

    return _to_buffer()

# One line per series, series is a mapping of legend label to values
def create_multi_graph(title, series, xlim=(), ylim=(), xlabel=None, ylabel=None,
                       graph_color="#777"):
    plt.clf()
    plt.title(title)
    axes = plt.gca()
    _style_axes(axes, graph_color)

    if len(xlim) > 0: axes.set_xlim(*xlim)
    if len(ylim) > 0: axes.set_ylim(*ylim)
    if xlabel: axes.set_xlabel(xlabel)
    if ylabel: axes.set_ylabel(ylabel)

    for label, values in series.items():
        plt.plot(list(values), label=label)
    if series:
        plt.legend(frameon=False)

    return _to_buffer()

# Scatter plot where every point is annotated with its own text label
def create_scatter_graph(title, xs, ys, annotations=(), xlabel=None, ylabel=None,
                         graph_color="#777", **kwargs):
    plt.clf()
    plt.title(title)
    axes = plt.gca()
    _style_axes(axes, graph_color)

    if xlabel: axes.set_xlabel(xlabel)
    if ylabel: axes.set_ylabel(ylabel)

    plt.scatter(list(xs), list(ys), **kwargs)
    for x, y, text in zip(xs, ys, annotations):
        axes.annotate(text, (x, y), textcoords="offset points", xytext=(4, 4),
                      fontsize=7, color=graph_color)

    return _to_buffer()

def save_buffer(buf, path):
    ensure_parent_dir(path)
    with open(path, "wb") as out_file:
        out_file.write(buf.getvalue())



### ETC ###
def dict_get_as_int(data: dict, key: str, default: int=0):
    try:
        return int(data.get(key, default))
    except (TypeError, ValueError):
        return default

def dict_get_as_float(data: dict, key: str, default: float=0):
    try:
        return float(data.get(key, default))
    except (TypeError, ValueError):
        return default

def dict_get_as_bool(data: dict, key: str, default: bool=False):
    value = data.get(key, default)
    if isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "on")
    return bool(value)

def dict_get_as_list(data: dict, key: str, default: list=()):
    try:
        return list(data.get(key, default))
    except (TypeError, ValueError):
        return list(default)


# Returns a 2-tuple containing the percentage number and the progress bar
# If the input is not a number, raise an error
NUM_BARS = 25
def create_progress_bar(percentage):
    if not isinstance(percentage, (int, float)):
        raise TypeError("input must be a number")

    percentage = min(1, max(0, percentage))

    bars = (
        "■" * math.floor(percentage * NUM_BARS) +
        " " * math.ceil((1 - percentage) * NUM_BARS)
    )
    return (int(percentage * 100), f"[{bars}]")
