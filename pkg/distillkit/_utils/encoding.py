"""Friendly JSON serializer & deserializer for distillkit documents."""
import collections.abc
import json
import math
import os
from enum import Enum
from pathlib import PurePath
from typing import Any, Dict, Iterable


class FriendlyJsonSerde:
    """Friendly JSON serializer & deserializer.

    Documents are written with sorted keys so that equal inputs give equal bytes. NamedTuples
    become objects and tuples become arrays. When encoding fails, the error names the keys or
    indices holding the unencodable values.

    >>> from typing import NamedTuple
    >>> class Point(NamedTuple):
    ...     y: int
    ...     x: float
    >>> FriendlyJsonSerde().json_encode({"p": Point(1, 2.0), "tags": ("a", "b")})
    '{"p": {"x": 2.0, "y": 1}, "tags": ["a", "b"]}'
    """

    def _json_mapping_errors(self, mapping: Dict[Any, Any]) -> Iterable[str]:
        for key, val in mapping.items():
            try:
                self._friendly_json_encode(val)
            except TypeError as exc:
                yield "%r: because (%s)" % (key, exc)

    def _json_list_errors(self, iterable: Iterable[Any]) -> Iterable[str]:
        for index, element in enumerate(iterable):
            try:
                self._friendly_json_encode(element)
            except TypeError as exc:
                yield "%d: because (%s)" % (index, exc)

    @staticmethod
    def _is_list_like(obj: Any) -> bool:
        return not isinstance(obj, (bytes, str, bytearray)) and isinstance(obj, collections.abc.Sequence)

    @classmethod
    def to_jsonable(cls, obj: Any) -> Any:
        """Convert NamedTuples, tuples, enums, paths and scalar tensors to plain JSON values.

        Non-finite floats become ``null``.

        >>> FriendlyJsonSerde.to_jsonable({"tol": float("inf")})
        {'tol': None}
        """
        if hasattr(obj, "_asdict"):
            return {key: cls.to_jsonable(val) for key, val in obj._asdict().items()}
        if isinstance(obj, Enum):
            return obj.value
        if isinstance(obj, PurePath):
            return str(obj)
        if isinstance(obj, float) and not math.isfinite(obj):
            return None
        if isinstance(obj, dict):
            return {key: cls.to_jsonable(val) for key, val in obj.items()}
        if cls._is_list_like(obj):
            return [cls.to_jsonable(val) for val in obj]
        if hasattr(obj, "item") and callable(obj.item) and getattr(obj, "ndim", 1) == 0:
            return obj.item()
        return obj

    def _friendly_json_encode(self, obj: Any, indent: Any = None) -> str:
        try:
            return json.dumps(self.to_jsonable(obj), sort_keys=True, indent=indent, allow_nan=False)
        except (TypeError, ValueError) as full_exception:
            if hasattr(obj, "items"):
                item_errors = "; ".join(self._json_mapping_errors(obj))
                raise TypeError("dict had unencodable value at keys: {{{}}}".format(item_errors)) from full_exception
            if FriendlyJsonSerde._is_list_like(obj):
                element_errors = "; ".join(self._json_list_errors(obj))
                raise TypeError("list had unencodable value at index: [{}]".format(element_errors)) from full_exception
            raise TypeError(str(full_exception)) from full_exception

    def json_decode(self, json_str: str) -> Dict[Any, Any]:  # pylint: disable=no-self-use
        """Deserialize JSON document to a Python object with friendly error messages."""
        try:
            decoded = json.loads(json_str)
            return decoded
        except json.decoder.JSONDecodeError as exc:
            err_msg = "Could not decode {} because of {}.".format(repr(json_str[:200]), exc)
            # Calling code may rely on catching JSONDecodeError to recognize bad json
            # so we have to re-raise the same type.
            raise json.decoder.JSONDecodeError(err_msg, exc.doc, exc.pos)

    def json_encode(self, obj: Any, indent: Any = None) -> str:
        """Serialize obj to a JSON formatted `str` with friendly error messages."""
        try:
            return self._friendly_json_encode(obj, indent=indent)
        except TypeError as exc:
            raise TypeError("Could not encode to JSON") from exc

    def write_document(self, path: "os.PathLike[str]", obj: Any) -> None:
        """Write ``obj`` as an indented JSON document, atomically."""
        tmp_path = f"{os.fspath(path)}.tmp"
        with open(tmp_path, "w", encoding="utf-8") as file_handle:
            file_handle.write(self.json_encode(obj, indent=2))
            file_handle.write("\n")
        os.replace(tmp_path, path)

    def read_document(self, path: "os.PathLike[str]") -> Dict[Any, Any]:
        """Read a JSON document."""
        with open(path, "r", encoding="utf-8") as file_handle:
            return self.json_decode(file_handle.read())
