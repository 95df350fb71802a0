from quantrules.dataset import Dataset


def make_dataset(columns, missing=None, sources=None, origin=None):
    """Build a Dataset from {name: (kind, values)} preserving insertion order."""
    names = [(name, kind) for name, (kind, _) in columns.items()]
    values = {name: vals for name, (_, vals) in columns.items()}
    return Dataset(names, values, missing=missing, sources=sources, origin=origin)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(str(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
