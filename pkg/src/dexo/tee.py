"""Software stand-in for attested execution on provider devices.

Each device hosts one trusted-application instance that preprocesses raw
readings, secret-shares the formatted datum, and signs every share together
with a runtime measurement. The attestation registry plays the vendor
service: it accepts a report iff the signature verifies under a registered
platform key and the measurement equals the ratified value. A tampered
instance is modeled by a flag that perturbs its measurement, which is exactly
what registration is meant to catch.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from . import wire
from .crypto import (
    SecretShare,
    SignatureKeyPair,
    create_shares,
    generate_keypair,
    sha256,
    sign,
    verify,
)


class TeeError(Exception):
    pass


class UnknownEidError(TeeError):
    pass


class PreprocessingFailure(TeeError):
    pass


# ---------------------------------------------------------------- rules

RULE_KINDS = ("clamp", "moving_average", "fixed_width")


@dataclass(frozen=True)
class PreprocessingRule:
    """Closed set of formatting rules applied inside the trusted app.

    Raw input is a sequence of big-endian unsigned readings of
    ``input_width`` bytes each; output values are encoded at
    ``output_width`` bytes.
    """

    kind: str
    value_min: int
    value_max: int
    input_width: int = 2
    output_width: int = 1
    window: int = 1

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"unknown rule kind {self.kind!r}")
        if self.value_min > self.value_max:
            raise ValueError("value_min must not exceed value_max")
        if self.value_max >= 256**self.output_width:
            raise ValueError("value_max does not fit output width")
        if self.window < 1:
            raise ValueError("window must be >= 1")


def _parse_readings(raw: bytes, width: int) -> list[int]:
    if not raw:
        raise PreprocessingFailure("raw input is empty")
    if len(raw) % width:
        raise PreprocessingFailure(
            f"raw length {len(raw)} is not a multiple of reading width {width}"
        )
    return [
        int.from_bytes(raw[i : i + width], "big") for i in range(0, len(raw), width)
    ]


def encode_readings(values: list[int], width: int = 2) -> bytes:
    return b"".join(v.to_bytes(width, "big") for v in values)


def preprocess(raw: bytes, rule: PreprocessingRule) -> bytes:
    """Format raw readings per the rule; output conforms to the declared range."""
    readings = _parse_readings(raw, rule.input_width)
    if rule.kind == "clamp":
        values = [min(max(r, rule.value_min), rule.value_max) for r in readings]
    elif rule.kind == "moving_average":
        if len(readings) < rule.window:
            raise PreprocessingFailure(
                f"{len(readings)} readings cannot fill window {rule.window}"
            )
        w = rule.window
        means = [
            (sum(readings[i : i + w]) + w // 2) // w
            for i in range(len(readings) - w + 1)
        ]
        values = [min(max(m, rule.value_min), rule.value_max) for m in means]
    else:  # fixed_width: readings must already conform
        out_of_range = [r for r in readings if not rule.value_min <= r <= rule.value_max]
        if out_of_range:
            raise PreprocessingFailure(f"readings out of range: {out_of_range}")
        values = readings
    return b"".join(v.to_bytes(rule.output_width, "big") for v in values)


# ---------------------------------------------------------------- instances

TA_VERSION = b"1"


@dataclass(frozen=True)
class RuntimeMeasurement:
    digest: bytes


def measure(descriptor: bytes, version: bytes = TA_VERSION, tampered: bool = False) -> RuntimeMeasurement:
    return RuntimeMeasurement(
        sha256(descriptor, version, b"\x01" if tampered else b"\x00")
    )


@dataclass(frozen=True)
class AttestationReport:
    share: SecretShare
    measurement: RuntimeMeasurement
    signature: bytes
    platform_public_key: bytes


@dataclass
class AttestationRegistry:
    genuine_keys: set[bytes] = field(default_factory=set)
    expected_measurement: RuntimeMeasurement | None = None

    def register_key(self, public_key: bytes) -> None:
        self.genuine_keys.add(public_key)


def report_payload(share: SecretShare, measurement: RuntimeMeasurement) -> bytes:
    return wire.encode_share(share) + measurement.digest


def attest_report(registry: AttestationRegistry, report: AttestationReport) -> bool:
    """True iff signed by a registered platform running the ratified program."""
    if report.platform_public_key not in registry.genuine_keys:
        return False
    if report.measurement != registry.expected_measurement:
        return False
    return verify(
        report.platform_public_key,
        report_payload(report.share, report.measurement),
        report.signature,
    )


@dataclass
class TeeInstance:
    eid: str
    program_hash: bytes
    keypair: SignatureKeyPair = field(repr=False)
    measurement: RuntimeMeasurement
    tampered: bool
    state: dict = field(default_factory=dict)
    _rng: random.Random = field(default=None, repr=False)


class TeePlatform:
    """Host for TEE instances; one install per device, one resume at a time."""

    def __init__(self, rng: random.Random | int = 0):
        self._rng = random.Random(rng) if isinstance(rng, int) else rng
        self._instances: dict[str, TeeInstance] = {}
        self._counter = 0

    def install(self, descriptor: bytes, tampered: bool = False) -> str:
        if not descriptor:
            raise TeeError("program descriptor must be nonempty")
        self._counter += 1
        eid = f"tee-{self._counter}"
        keypair = generate_keypair(self._rng.randbytes(32))
        self._instances[eid] = TeeInstance(
            eid=eid,
            program_hash=sha256(descriptor),
            keypair=keypair,
            measurement=measure(descriptor, tampered=tampered),
            tampered=tampered,
            _rng=random.Random(self._rng.getrandbits(64)),
        )
        return eid

    def _instance(self, eid: str) -> TeeInstance:
        try:
            return self._instances[eid]
        except KeyError:
            raise UnknownEidError(f"no instance {eid!r}") from None

    def resume_attest(self, eid: str) -> tuple[RuntimeMeasurement, bytes, bytes]:
        inst = self._instance(eid)
        sig = sign(inst.keypair.private_key, inst.measurement.digest)
        return inst.measurement, sig, inst.keypair.public_key

    def resume_gendata(
        self,
        eid: str,
        n: int,
        t: int,
        raw: bytes,
        rule: PreprocessingRule,
        provider_index: int = 1,
    ) -> tuple[list[SecretShare], list[AttestationReport], bytes]:
        """Preprocess, share, and sign inside the instance.

        Share j is destined for node j; each report signs the share record
        together with the runtime measurement.
        """
        inst = self._instance(eid)
        if not raw:
            raise PreprocessingFailure("raw input is empty")
        datum = preprocess(raw, rule)
        shares = create_shares(t, n, datum, rng=inst._rng, provider_index=provider_index)
        reports = [
            AttestationReport(
                share=s,
                measurement=inst.measurement,
                signature=sign(
                    inst.keypair.private_key, report_payload(s, inst.measurement)
                ),
                platform_public_key=inst.keypair.public_key,
            )
            for s in shares
        ]
        return shares, reports, inst.keypair.public_key

    def attest_ok(self, registry: AttestationRegistry, eid: str) -> bool:
        measurement, sig, mpk = self.resume_attest(eid)
        if mpk not in registry.genuine_keys:
            return False
        if measurement != registry.expected_measurement:
            return False
        return verify(mpk, measurement.digest, sig)
