import dataclasses
from dataclasses import MISSING, Field, is_dataclass
from typing import Any, List, Mapping, Type, TypeVar

from mcusum.data import Data, DictData
from mcusum.exceptions import (
    ConfigError,
    MissingValueError,
    UnexpectedDataError,
    UnionMatchError,
    WrongTypeError,
)
from mcusum.types import (
    extract_generic,
    extract_optional,
    extract_origin_collection,
    get_data_class_hints,
    is_generic_collection,
    is_instance,
    is_optional,
    is_union,
)

T = TypeVar("T")


class _NoDefault(Exception):
    pass


def from_dict(data_class: Type[T], data: Data) -> T:
    """Create a data class instance from a JSON-decoded mapping.

    Unknown keys are always rejected. Errors carry the dotted path of the offending field.

    :param data_class: a data class type
    :param data: a mapping of input data
    :return: an instance of the data class
    """
    if not isinstance(data, Mapping):
        raise WrongTypeError(field_type=data_class, value=data)
    hints = get_data_class_hints(data_class)
    fields = [f for f in dataclasses.fields(data_class) if f.init]  # type: ignore[arg-type]
    extra_keys = set(data.keys()) - {f.name for f in fields}
    if extra_keys:
        raise UnexpectedDataError(keys=extra_keys)
    init_values: DictData = {}
    for field in fields:
        field_type = hints[field.name]
        if field.name in data:
            try:
                value = _build_value(type_=field_type, data=data[field.name])
            except ConfigError as error:
                error.update_path(field.name)
                raise
            if not is_instance(value, field_type):
                raise WrongTypeError(field_path=field.name, field_type=field_type, value=value)
            init_values[field.name] = value
        else:
            try:
                init_values[field.name] = _default_value(field, field_type)
            except _NoDefault:
                raise MissingValueError(field.name)
    return data_class(**init_values)


def to_dict(instance: Any) -> DictData:
    """Serialize a data class instance, omitting fields that hold None."""
    return {key: value for key, value in _dump(instance).items() if value is not None}


def _dump(value: Any) -> Any:
    if is_dataclass(value) and not isinstance(value, type):
        return {
            f.name: _dump(getattr(value, f.name))
            for f in dataclasses.fields(value)
            if getattr(value, f.name) is not None
        }
    if isinstance(value, (list, tuple)):
        return [_dump(item) for item in value]
    return value


def _default_value(field: Field, field_type: Type) -> Any:
    if field.default is not MISSING:
        return field.default
    if field.default_factory is not MISSING:  # type: ignore[misc]
        return field.default_factory()  # type: ignore[misc]
    if is_optional(field_type):
        return None
    raise _NoDefault()


def _build_value(type_: Type, data: Any) -> Any:
    if is_optional(type_):
        if data is None:
            return None
        type_ = extract_optional(type_)
    if is_union(type_):
        return _build_value_for_union(union=type_, data=data)
    if is_generic_collection(type_):
        if isinstance(data, extract_origin_collection(type_)):
            return _build_value_for_list(collection=type_, data=data)
        return data
    if is_dataclass(type_) and isinstance(data, Mapping):
        return from_dict(data_class=type_, data=data)
    return data


def _build_value_for_union(union: Type, data: Any) -> Any:
    for inner_type in extract_generic(union):
        try:
            value = _build_value(type_=inner_type, data=data)
        except ConfigError:
            continue
        if is_instance(value, inner_type):
            return value
    raise UnionMatchError(field_type=union, value=data)


def _build_value_for_list(collection: Type, data: Any) -> List[Any]:
    item_type = extract_generic(collection, defaults=(Any,))[0]
    return [_build_item(item_type, item, index) for index, item in enumerate(data)]


def _build_item(type_: Type, item: Any, index: int) -> Any:
    try:
        value = _build_value(type_=type_, data=item)
    except ConfigError as error:
        error.update_path(str(index))
        raise
    if not is_instance(value, type_):
        raise WrongTypeError(field_path=str(index), field_type=type_, value=value)
    return value
