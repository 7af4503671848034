from typing import Any, Collection, Dict, Literal, Tuple, Type, Union, get_args, get_origin, get_type_hints


def get_data_class_hints(data_class: Type) -> Dict[str, Any]:
    return get_type_hints(data_class)


def is_union(type_: Type) -> bool:
    if get_origin(type_) is Union:
        return True
    try:
        from types import UnionType  # type: ignore

        return isinstance(type_, UnionType)
    except ImportError:
        return False


def is_optional(type_: Type) -> bool:
    return is_union(type_) and type(None) in get_args(type_)


def extract_optional(optional: Type) -> Type:
    members = [member for member in get_args(optional) if member is not type(None)]
    if not members:
        raise ValueError("can not find not-none value")
    if len(members) == 1:
        return members[0]
    return Union[tuple(members)]  # type: ignore


def is_literal(type_: Type) -> bool:
    return get_origin(type_) is Literal


def extract_origin_collection(collection: Type) -> Type:
    return get_origin(collection)


def is_generic_collection(type_: Type) -> bool:
    origin = get_origin(type_)
    if origin is None or origin is Union or origin is Literal:
        return False
    try:
        return issubclass(origin, Collection) and origin is not str
    except TypeError:
        return False


def extract_generic(type_: Type, defaults: Tuple = ()) -> tuple:
    return get_args(type_) or defaults


def is_instance(value: Any, type_: Type) -> bool:
    if type_ is Any:
        return True
    if is_union(type_):
        return any(is_instance(value, inner) for inner in get_args(type_))
    if is_literal(type_):
        return any(value == option and type(value) is type(option) for option in get_args(type_))
    if is_generic_collection(type_):
        origin = get_origin(type_)
        if not isinstance(value, origin):
            return False
        args = get_args(type_)
        if not args:
            return True
        return all(is_instance(item, args[0]) for item in value)
    if type_ is float:
        # JSON integers are acceptable wherever a real is expected
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if type_ is int:
        return isinstance(value, int) and not isinstance(value, bool)
    try:
        return isinstance(value, type_)
    except TypeError:
        return False
