"""Energy accounting for the digital encoder and the multiplexed optical decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

from muxdetect.errors import ConfigError


@dataclass(frozen=True)
class EnergyModel:
    encoder_flops_per_frame: float = 2.7e9
    joules_per_flop: float = 5.5e-12
    decoder_power_low: float = 3.73  # W
    decoder_power_high: float = 7.40
    frame_rate_low: float = 120.0  # Hz
    frame_rate_high: float = 180.0
    L: int = 15
    N: int = 12

    def __post_init__(self):
        values = asdict(self)
        if any(v <= 0 for v in values.values()):
            raise ConfigError("energy model entries must all be positive")
        if self.decoder_power_low > self.decoder_power_high or self.frame_rate_low > self.frame_rate_high:
            raise ConfigError("energy model bounds must satisfy low <= high")

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyModel":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown energy keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EnergyReport:
    encoder_flops_per_frame: float
    encoder_mj_per_video: float
    decoder_mj_per_batch: tuple[float, float]
    decoder_mj_per_video: tuple[float, float]
    total_mj_per_video: tuple[float, float]
    twin_decoder_flops: Optional[float] = None
    twin_decoder_mj_per_batch: Optional[float] = None
    twin_decoder_mj_per_video: Optional[float] = None
    L: int = 15
    N: int = 12
    K: Optional[int] = None

    def rows(self) -> list[dict]:
        out = [
            {"quantity": "encoder_flops_per_frame", "low": self.encoder_flops_per_frame, "high": self.encoder_flops_per_frame, "unit": "FLOP"},
            {"quantity": "encoder_energy_per_video", "low": self.encoder_mj_per_video, "high": self.encoder_mj_per_video, "unit": "mJ"},
            {"quantity": "optical_decoder_energy_per_batch", "low": self.decoder_mj_per_batch[0], "high": self.decoder_mj_per_batch[1], "unit": "mJ"},
            {"quantity": "optical_decoder_energy_per_video", "low": self.decoder_mj_per_video[0], "high": self.decoder_mj_per_video[1], "unit": "mJ"},
            {"quantity": "hybrid_total_energy_per_video", "low": self.total_mj_per_video[0], "high": self.total_mj_per_video[1], "unit": "mJ"},
        ]
        if self.twin_decoder_flops is not None:
            out += [
                {"quantity": "digital_twin_decoder_flops_per_batch", "low": self.twin_decoder_flops, "high": self.twin_decoder_flops, "unit": "FLOP"},
                {"quantity": "digital_twin_decoder_energy_per_batch", "low": self.twin_decoder_mj_per_batch, "high": self.twin_decoder_mj_per_batch, "unit": "mJ"},
                {"quantity": "digital_twin_decoder_energy_per_video", "low": self.twin_decoder_mj_per_video, "high": self.twin_decoder_mj_per_video, "unit": "mJ"},
            ]
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def energy_report(model: EnergyModel, layout=None, stack=None, flops_per_frame_measured: Optional[float] = None) -> EnergyReport:
    """Per-video and per-batch energies in millijoules.

    The optical path is passive, so its energy depends only on the power and
    frame-rate bounds and on L, never on the number of diffractive layers.
    ``flops_per_frame_measured`` replaces the model's per-frame FLOP figure
    when given. The digital-twin rows need both ``layout`` and ``stack``.
    """
    L = layout.L if layout is not None else model.L
    N = layout.N if layout is not None else model.N
    flops = model.encoder_flops_per_frame if flops_per_frame_measured is None else float(flops_per_frame_measured)
    enc = flops * N * model.joules_per_flop * 1e3
    batch = (model.decoder_power_low / model.frame_rate_high * 1e3, model.decoder_power_high / model.frame_rate_low * 1e3)
    video = (batch[0] / L, batch[1] / L)
    report = EnergyReport(
        encoder_flops_per_frame=flops,
        encoder_mj_per_video=enc,
        decoder_mj_per_batch=batch,
        decoder_mj_per_video=video,
        total_mj_per_video=(enc + video[0], enc + video[1]),
        L=L,
        N=N,
    )
    if layout is not None and stack is not None:
        from muxdetect.decoder import flops_decode

        twin = flops_decode(layout, stack)
        report.twin_decoder_flops = twin
        report.twin_decoder_mj_per_batch = twin * model.joules_per_flop * 1e3
        report.twin_decoder_mj_per_video = report.twin_decoder_mj_per_batch / L
        report.K = stack.K
    return report
