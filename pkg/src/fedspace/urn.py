"""Canonical entity identifiers.

Two shapes are recognised::

    urn:li:dataset:(urn:li:dataPlatform:{platform},{name},{env})
    urn:li:domain:{name}

``platform``, ``name`` and ``env`` are non-empty and may not contain commas
or parentheses; ``env`` is one of ``PROD``, ``DEV`` or ``TEST``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from fedspace.errors import MalformedUrn

ENVIRONMENTS = ("PROD", "DEV", "TEST")

_TOKEN = r"[^,()]+"
_DATASET_RE = re.compile(
    rf"urn:li:dataset:\(urn:li:dataPlatform:({_TOKEN}),({_TOKEN}),(PROD|DEV|TEST)\)\Z"
)
_DOMAIN_RE = re.compile(rf"urn:li:domain:({_TOKEN})\Z")
_TOKEN_RE = re.compile(rf"{_TOKEN}\Z")

DATASET = "dataset"
DOMAIN = "domain"


@dataclass(frozen=True)
class Urn:
    kind: str
    name: str
    platform: str | None = None
    env: str | None = None

    def __post_init__(self):
        if self.kind == DATASET:
            parts = (self.platform, self.name)
            if self.env not in ENVIRONMENTS:
                raise MalformedUrn(f"env must be one of {ENVIRONMENTS}, got {self.env!r}")
        elif self.kind == DOMAIN:
            parts = (self.name,)
            if self.platform is not None or self.env is not None:
                raise MalformedUrn("domain urns carry no platform or env")
        else:
            raise MalformedUrn(f"unknown urn kind {self.kind!r}")
        for part in parts:
            if not isinstance(part, str) or not _TOKEN_RE.match(part):
                raise MalformedUrn(f"invalid urn token {part!r}")

    @classmethod
    def dataset(cls, platform: str, name: str, env: str = "PROD") -> Urn:
        return cls(DATASET, name, platform, env)

    @classmethod
    def domain(cls, name: str) -> Urn:
        return cls(DOMAIN, name)

    @classmethod
    def parse(cls, text: str) -> Urn:
        if not isinstance(text, str):
            raise MalformedUrn(f"urn must be text, got {type(text).__name__}")
        m = _DATASET_RE.match(text)
        if m:
            return cls(DATASET, m.group(2), m.group(1), m.group(3))
        m = _DOMAIN_RE.match(text)
        if m:
            return cls(DOMAIN, m.group(1))
        raise MalformedUrn(f"not a canonical urn: {text!r}")

    @property
    def is_dataset(self) -> bool:
        return self.kind == DATASET

    @property
    def is_domain(self) -> bool:
        return self.kind == DOMAIN

    def __str__(self) -> str:
        if self.kind == DATASET:
            return f"urn:li:dataset:(urn:li:dataPlatform:{self.platform},{self.name},{self.env})"
        return f"urn:li:domain:{self.name}"


def parse_urn(text: str) -> Urn:
    return Urn.parse(text)


def is_dataset_urn(text: str) -> bool:
    return isinstance(text, str) and _DATASET_RE.match(text) is not None


def is_domain_urn(text: str) -> bool:
    return isinstance(text, str) and _DOMAIN_RE.match(text) is not None


def require_dataset_urn(text: str) -> str:
    if not is_dataset_urn(text):
        raise MalformedUrn(f"not a dataset urn: {text!r}")
    return text


def require_domain_urn(text: str) -> str:
    if not is_domain_urn(text):
        raise MalformedUrn(f"not a domain urn: {text!r}")
    return text
