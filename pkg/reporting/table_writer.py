import csv
import io
import json
import logging
from pathlib import Path

import numpy as np

from services.asymptotics import ConvergenceTable

logger = logging.getLogger(__name__)

FORMATS = ('csv', 'json')


def format_complex(value):
    """Text form re+imj with 17 significant digits, exact for doubles."""
    value = complex(value)
    return f"{value.real:.17g}{value.imag:+.17g}j"


def parse_complex(text):
    """
    Inverse of `format_complex`; plain real numbers are accepted too.

    Raises:
        ValueError: If the text is not a number.
    """
    if isinstance(text, (int, float, complex)):
        return complex(text)
    try:
        return complex(text.strip().replace(' ', ''))
    except (AttributeError, ValueError) as e:
        raise ValueError(f"Not a complex number: {text!r}") from e


def plain(value):
    """Converts numpy and complex values into JSON-ready objects."""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    if isinstance(value, (complex, np.complexfloating)):
        return format_complex(value)
    return value


def _restore(value):
    if isinstance(value, dict):
        return {k: _restore(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_restore(v) for v in value]
    if isinstance(value, str) and value.endswith('j'):
        try:
            return parse_complex(value)
        except ValueError:
            return value
    return value


def _header(table):
    z = table.z if isinstance(table.z, str) else format_complex(table.z)
    return {
        'experiment_id': table.experiment_id,
        'z': z,
        'gate': table.gate,
        'notes': plain(table.notes),
        'checks': plain(table.checks),
        'final_error': table.final_error,
        'passed': table.passed,
    }


def serialize_table(table, fmt='csv'):
    """
    Text of a ConvergenceTable in csv or json.

    The csv form carries the header fields as '# key: json' comment lines
    followed by the columns m,error.
    """
    if fmt not in FORMATS:
        raise ValueError(f"Unknown output format {fmt!r}")
    header = _header(table)
    if fmt == 'json':
        document = dict(header, rows=[[m, float(error)] for m, error in table.rows])
        return json.dumps(document, indent=2, sort_keys=True) + '\n'
    buffer = io.StringIO()
    for key, value in header.items():
        buffer.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(['m', 'error'])
    for m, error in table.rows:
        writer.writerow([m, repr(float(error))])
    return buffer.getvalue()


def parse_table(text, fmt='csv'):
    """
    Reads a table written by `serialize_table`.

    Returns:
        The ConvergenceTable; derived verdict fields are recomputed, not read.
    """
    if fmt not in FORMATS:
        raise ValueError(f"Unknown output format {fmt!r}")
    if fmt == 'json':
        header = json.loads(text)
        rows = [(int(m), float(error)) for m, error in header['rows']]
    else:
        header, rows = {}, []
        lines = text.splitlines()
        body = []
        for line in lines:
            if line.startswith('# '):
                key, _, value = line[2:].partition(': ')
                header[key] = json.loads(value)
            else:
                body.append(line)
        for record in csv.DictReader(body):
            rows.append((int(record['m']), float(record['error'])))
    z = header['z']
    z = z if z == 'coefficient-level' else parse_complex(z)
    return ConvergenceTable(header['experiment_id'], z, rows, header['gate'],
                            _restore(header['notes']), _restore(header['checks']))


def serialize_records(columns, records, fmt='csv'):
    """Generic rows (lists aligned with columns) as csv or a json list of objects."""
    if fmt not in FORMATS:
        raise ValueError(f"Unknown output format {fmt!r}")
    records = [plain(list(record)) for record in records]
    if fmt == 'json':
        return json.dumps([dict(zip(columns, record)) for record in records], indent=2, sort_keys=True) + '\n'
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(columns)
    for record in records:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in record])
    return buffer.getvalue()


class TableWriter:
    """
    Writes experiment results, one file per experiment, named <experiment-id>.<fmt>.
    """

    def __init__(self, app=None):
        """
        Initializes the TableWriter.

        Args:
            app: The application instance.
        """
        self.app = app
        self.output_dir = None
        self.fmt = 'csv'
        if app is not None:
            self.init_app(app)

    def init_app(self, app):
        """
        Registers the writer and reads the output settings.

        Args:
            app: The application instance.
        """
        self.app = app
        app.extensions['table_writer'] = self
        self.configure(app.config['OUTPUT_DIR'], app.config['OUTPUT_FORMAT'])

    def configure(self, output_dir=None, fmt=None):
        if fmt is not None:
            if fmt not in FORMATS:
                raise ValueError(f"Unknown output format {fmt!r}")
            self.fmt = fmt
        if output_dir is not None:
            self.output_dir = Path(output_dir)

    def _write(self, name, text):
        path = self.output_dir / f"{name}.{self.fmt}"
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        except OSError as e:
            logger.error(f"Failed to write {path}: {e}")
            raise
        logger.info(f"Wrote {path}")
        return path

    def publish_table(self, table):
        """
        Writes a ConvergenceTable.

        Args:
            table: The table to write.

        Returns:
            The path of the written file.
        """
        return self._write(table.experiment_id, serialize_table(table, self.fmt))

    def publish_records(self, name, columns, records):
        """
        Writes generic result rows.

        Args:
            name: File stem.
            columns: Column names.
            records: Iterable of rows aligned with columns.

        Returns:
            The path of the written file.
        """
        return self._write(name, serialize_records(columns, records, self.fmt))


table_writer = TableWriter()
