"""
Versioned JSON schema registry for the files the CLI writes.
Schema files live next to this module as ``<name>_v<major>.<minor>.<patch>.json``.
"""
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

try:
    import jsonschema
    JSONSCHEMA_AVAILABLE = True
except ImportError:
    JSONSCHEMA_AVAILABLE = False

from core.exceptions import ManifestError, OperationContext, TensorIOError

SCHEMA_DIR = Path(__file__).resolve().parent


def _version_key(version: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in version.split("."))


@dataclass
class SchemaVersion:
    """A versioned JSON schema."""
    schema_name: str
    version: str
    schema: Dict[str, Any]


class SchemaManager:
    """Loads the bundled schemas and validates documents against the newest version."""

    def __init__(self, storage_path: Optional[str] = None):
        self.storage_path = Path(storage_path) if storage_path else SCHEMA_DIR
        self.schemas: Dict[str, Dict[str, SchemaVersion]] = {}
        self.logger = logging.getLogger(__name__)
        self._load_schemas()

    def _load_schemas(self):
        for schema_file in sorted(self.storage_path.glob("*_v*.json")):
            try:
                data = json.loads(schema_file.read_text())
                entry = SchemaVersion(data["schema_name"], data["version"], data["schema"])
            except (OSError, ValueError, KeyError) as e:
                self.logger.error(f"Failed to load schema from {schema_file}: {e}")
                continue
            if JSONSCHEMA_AVAILABLE:
                jsonschema.Draft202012Validator.check_schema(entry.schema)
            self.schemas.setdefault(entry.schema_name, {})[entry.version] = entry

    def current_version(self, schema_name: str) -> Optional[str]:
        versions = self.schemas.get(schema_name)
        if not versions:
            return None
        return max(versions, key=_version_key)

    def validate(self, data: Dict[str, Any], schema_name: str, version: Optional[str] = None) -> Tuple[bool, Optional[str]]:
        """Validate data against a schema."""
        if not JSONSCHEMA_AVAILABLE:
            self.logger.warning("jsonschema not available, skipping validation")
            return True, None
        version = version or self.current_version(schema_name)
        if version is None or version not in self.schemas.get(schema_name, {}):
            return False, f"Schema '{schema_name}' version '{version}' not found"
        try:
            jsonschema.validate(data, self.schemas[schema_name][version].schema)
            return True, None
        except jsonschema.ValidationError as e:
            return False, e.message


_default_manager: Optional[SchemaManager] = None


def get_schema_manager() -> SchemaManager:
    global _default_manager
    if _default_manager is None:
        _default_manager = SchemaManager()
    return _default_manager


def file_sha256(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                h.update(chunk)
    except OSError as e:
        raise TensorIOError(f"cannot hash file: {e}", path=str(path))
    return h.hexdigest()


def validate_manifest(manifest: Dict[str, Any]) -> Dict[str, Any]:
    ok, error = get_schema_manager().validate(manifest, "manifest")
    if not ok:
        raise ManifestError(f"invalid manifest: {error}", OperationContext("validate_manifest"))
    return manifest


def write_manifest(path, manifest: Dict[str, Any]) -> Path:
    """Validate and write a manifest as sorted, indented JSON."""
    path = Path(path)
    validate_manifest(manifest)
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise TensorIOError(f"cannot write manifest: {e}", path=str(path))
    return path
