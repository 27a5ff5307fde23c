"""Head registry."""

from ..errors import ConfigError
from ..models import HeadKind
from .base import BaseHead
from .protonet import ProtoNetHead, protonet_logits
from .ridge import RidgeHead, ridge_logits

ALL_HEADS = [
    ProtoNetHead,
    RidgeHead,
]


def head_for(kind: HeadKind) -> BaseHead:
    for head_cls in ALL_HEADS:
        if head_cls.head_type is kind.type:
            return head_cls(kind)
    raise ConfigError(f"no head registered for {kind.type}")


__all__ = ["ALL_HEADS", "BaseHead", "head_for", "protonet_logits", "ridge_logits"]
