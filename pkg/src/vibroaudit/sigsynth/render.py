"""Cohort sampling and waveform rendering for synthetic worlds.

Each recording session is rendered from its own random stream keyed by
(world seed, session index), so sessions are reproducible independently
of how many are generated or in what order.  Within a session the draw
order is fixed: session-scope activations and tone phases first, then
per repetition the repetition-scope activations, the observation draw,
and finally the renderer draws for observed sources in source order;
the sensor noise for the whole session is drawn last.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import firwin2

from .._parallel import pmap
from .._rng import stream, substream_id
from ..dsp import Signal, apply_fir_zero_delay, design_bandpass_fir
from ..errors import ParameterError
from .world import HEALTH_VALUES, WorldSpec, validate_world


# ---------------------------------------------------------------------------
# ground truth containers


@dataclass
class GroundTruth:
    """Per-session record of everything the generative model decided.

    source_events and observed_events hold one {source name: bool} dict
    per repetition (S and O respectively).  component_rms maps source
    name to the per-repetition RMS of that source's contribution to the
    mixture, 0.0 where the source was not observed.  Full component
    waveforms are only retained when the cohort was sampled with
    keep_components=True; they are memory-heavy and default to None.
    """

    source_events: list[dict[str, bool]]
    observed_events: list[dict[str, bool]]
    component_rms: dict[str, list[float]]
    knee_click_amplitudes: list[np.ndarray]
    sensor_noise_rms: float
    components: dict[str, np.ndarray] | None = None
    sensor_noise: np.ndarray | None = None


@dataclass
class RecordingSession:
    session_id: str
    subject_id: str
    side: str
    device_id: str
    health: str
    signal: Signal
    n_repetitions: int
    ground_truth: GroundTruth
    metadata: dict = field(default_factory=dict)


@dataclass
class _PlannedSession:
    session_index: int
    session_id: str
    subject_id: str
    subject_index: int
    side: str
    device_id: str
    health: str
    metadata: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# cohort layout

_DEVICES = ("DL", "DR")


def plan_cohort(world: WorldSpec) -> list[_PlannedSession]:
    """Deterministic session plan for a world (no waveforms yet).

    Health, sides and side-locked devices follow a fixed first-k layout
    so the plan is a pure function of the cohort spec; only 'shuffled'
    device assignment consumes randomness, from the cohort stream.
    """
    cohort = world.cohort
    rng = stream(world.seed, substream_id("cohort", 0))
    plans: list[_PlannedSession] = []

    def device_for(side: str) -> str:
        if cohort.device_assignment == "side-locked":
            return "DL" if side == "left" else "DR"
        return _DEVICES[int(rng.integers(0, len(_DEVICES)))]

    if cohort.session_tag == "day":
        for day in range(cohort.n_subjects):
            plans.append(
                _PlannedSession(
                    session_index=day,
                    session_id=f"sess{day:03d}",
                    subject_id="subj000",
                    subject_index=0,
                    side="left",
                    device_id=device_for("left"),
                    health="Healthy",
                    metadata={"day": day},
                )
            )
        return plans

    if cohort.pairing == "independent":
        n_unhealthy = int(round(cohort.n_subjects * cohort.health_split))
        n_healthy = cohort.n_subjects - n_unhealthy
        for s in range(cohort.n_subjects):
            side = "left" if s % 2 == 0 else "right"
            plans.append(
                _PlannedSession(
                    session_index=s,
                    session_id=f"sess{s:03d}",
                    subject_id=f"subj{s:03d}",
                    subject_index=s,
                    side=side,
                    device_id=device_for(side),
                    health="Healthy" if s < n_healthy else "Unhealthy",
                )
            )
        return plans

    # complementary: one Healthy and one Unhealthy leg per subject
    n_left_unhealthy = int(round(cohort.n_subjects * cohort.left_unhealthy_fraction))
    idx = 0
    for s in range(cohort.n_subjects):
        left_health = "Unhealthy" if s < n_left_unhealthy else "Healthy"
        right_health = "Healthy" if left_health == "Unhealthy" else "Unhealthy"
        for side, health in (("left", left_health), ("right", right_health)):
            plans.append(
                _PlannedSession(
                    session_index=idx,
                    session_id=f"sess{idx:03d}",
                    subject_id=f"subj{s:03d}",
                    subject_index=s,
                    side=side,
                    device_id=device_for(side),
                    health=health,
                )
            )
            idx += 1
    return plans


# ---------------------------------------------------------------------------
# per-source renderers


def _render_knee(rng: np.random.Generator, n: int, fs: float, params: dict,
                 unhealthy_effect: bool) -> tuple[np.ndarray, np.ndarray]:
    """Poisson train of damped sinusoid bursts; returns (wave, click amps)."""
    effect = bool(params.get("health_effect", False)) and unhealthy_effect
    rate = float(params.get("click_rate", 8.0)) * (1.3 if effect else 1.0)
    amp = float(params.get("click_amp", 0.15)) * (1.5 if effect else 1.0)
    f_c = float(params.get("center_freq", 1500.0))
    damping = float(params.get("damping", 80.0))
    jitter = float(params.get("amp_jitter_sigma", 0.1))

    dur = n / fs
    n_clicks = int(rng.poisson(rate * dur))
    starts = rng.uniform(0.0, dur, size=n_clicks)
    amps = amp * rng.lognormal(0.0, jitter, size=n_clicks) if jitter > 0 else np.full(n_clicks, amp)

    # burst long enough for a 60 dB decay
    burst_len = max(1, int(np.ceil(np.log(1000.0) / damping * fs)))
    t = np.arange(burst_len) / fs
    burst = np.sin(2.0 * np.pi * f_c * t) * np.exp(-damping * t)

    out = np.zeros(n)
    for start, a in zip(starts, amps):
        i0 = int(start * fs)
        seg = min(burst_len, n - i0)
        if seg > 0:
            out[i0:i0 + seg] += a * burst[:seg]
    return out, amps


def _render_tone(n: int, fs: float, params: dict, phase: float, abs_start: int) -> np.ndarray:
    """Steady sinusoid; absolute sample time keeps session-scope tones
    phase-continuous across repetition boundaries."""
    freq = float(params.get("freq", 1000.0))
    amp = float(params.get("amp", 0.03))
    t = (abs_start + np.arange(n)) / fs
    return amp * np.sin(2.0 * np.pi * freq * t + phase)


def _render_broadband(rng: np.random.Generator, n: int, fs: float, params: dict,
                      level_db: float) -> np.ndarray:
    """White Gaussian bed; an optional band (lo, hi) colors it by the
    shared zero-delay band-pass so the level applies pre-filter."""
    sigma = 10.0 ** (level_db / 20.0)
    wave = rng.normal(0.0, sigma, size=n)
    band = params.get("band")
    if band is not None:
        lo, hi = float(band[0]), float(band[1])
        h = design_bandpass_fir(lo, hi, fs, int(params.get("taps", 513)))
        wave = apply_fir_zero_delay(wave, h)
    return wave


def _tilt_taps(slope_db_per_khz: float, fs: float, ref_hz: float, ntaps: int,
               bump: tuple[float, float, float] | None = None) -> np.ndarray:
    """Linear-phase FIR shaping the spectrum by a dB-per-kHz tilt.

    An optional bump (center Hz, gain dB, width Hz) superimposes a
    Gaussian resonance, used as a health-independent device signature.
    """
    if ntaps % 2 == 0:
        raise ParameterError("tilt filter needs an odd number of taps")
    nyq = fs / 2.0
    freqs = np.linspace(0.0, nyq, 257)
    gains_db = slope_db_per_khz * (freqs - ref_hz) / 1000.0
    if bump is not None:
        center, gain_db, width = bump
        gains_db = gains_db + gain_db * np.exp(-0.5 * ((freqs - center) / width) ** 2)
    return firwin2(ntaps, freqs, 10.0 ** (gains_db / 20.0), fs=fs)


def _tilt_residual(mix: np.ndarray, fs: float, params: dict, device_id: str,
                   unhealthy: bool) -> np.ndarray:
    """Device coloration as an additive residual F(mix) - mix.

    Kept as a residual component so the session mixture is still an
    exact sum of per-source components plus noise.
    """
    slopes = params.get("slopes_db_per_khz", {})
    if device_id not in slopes:
        raise ParameterError(f"device-tilt source has no slope for device {device_id!r}")
    slope = float(slopes[device_id])
    if unhealthy and device_id == params.get("health_delta_device"):
        slope += float(params.get("health_delta_db_per_khz", 0.0))
    bump = params.get("bumps", {}).get(device_id)
    h = _tilt_taps(
        slope,
        fs,
        float(params.get("ref_hz", 1000.0)),
        int(params.get("ntaps", 129)),
        bump=None if bump is None else tuple(float(v) for v in bump),
    )
    return apply_fir_zero_delay(mix, h) - mix


# ---------------------------------------------------------------------------
# session rendering


def _event_index(active: list[bool]) -> int:
    # composite event i has source j active iff bit j of i is clear
    idx = 0
    for j, a in enumerate(active):
        if not a:
            idx |= 1 << j
    return idx


def _active_from_index(index: int, n_sources: int) -> list[bool]:
    return [((index >> j) & 1) == 0 for j in range(n_sources)]


def _day_level_offsets(world: WorldSpec, n_sessions: int) -> dict[int, np.ndarray]:
    """Per-session level offsets for broadband sources with day_levels.

    day_levels gives a fixed offsets_db schedule (extended by repeating
    its last step when there are more sessions than entries) plus an
    optional per-day Gaussian jitter, drawn once per world from a stream
    keyed by the source index so every session sees the same schedule
    regardless of render order.
    """
    offsets: dict[int, np.ndarray] = {}
    for j, src in enumerate(world.base_sources):
        profile = src.waveform_params.get("day_levels")
        if src.kind == "broadband" and profile is not None:
            base = np.asarray(profile.get("offsets_db", [0.0]), dtype=np.float64)
            if len(base) < n_sessions:
                step = base[-1] - base[-2] if len(base) >= 2 else 0.0
                extra = base[-1] + step * np.arange(1, n_sessions - len(base) + 1)
                base = np.concatenate([base, extra])
            out = base[:n_sessions].copy()
            jitter = float(profile.get("jitter_db", 0.0))
            if jitter > 0:
                rng = stream(world.seed, substream_id("misc", j))
                out = out + jitter * rng.standard_normal(n_sessions)
            offsets[j] = out
    return offsets


def _render_session(world: WorldSpec, plan: _PlannedSession,
                    day_offsets: dict[int, np.ndarray],
                    keep_components: bool) -> RecordingSession:
    fs = world.sample_rate
    cohort = world.cohort
    n_rep = cohort.n_repetitions
    rep_len = int(round(cohort.repetition_duration_s * fs))
    total = n_rep * rep_len
    sources = world.base_sources
    names = world.source_names
    n_src = len(sources)
    unhealthy = plan.health == "Unhealthy"
    probs = world.activation_probs(plan.health)

    rng = stream(world.seed, substream_id("session", plan.session_index))

    # session-scope draws, unconditionally and in source order, so the
    # stream stays aligned whatever the activation outcomes are
    session_active: dict[int, bool] = {}
    session_phase: dict[int, float] = {}
    for j, src in enumerate(sources):
        if src.activation_scope == "session":
            session_active[j] = bool(rng.random() < probs[j])
            if plan.subject_index in src.forced_active_subjects:
                session_active[j] = True
        if src.kind == "tone" and src.activation_scope == "session":
            session_phase[j] = float(rng.uniform(0.0, 2.0 * np.pi))

    channel = None
    if world.sensor_channel is not None:
        channel = np.asarray(world.sensor_channel, dtype=np.float64)

    components = {name: np.zeros(total) for name in names}
    source_events: list[dict[str, bool]] = []
    observed_events: list[dict[str, bool]] = []
    component_rms: dict[str, list[float]] = {name: [] for name in names}
    knee_amps: list[np.ndarray] = []

    for r in range(n_rep):
        lo = r * rep_len
        sl = slice(lo, lo + rep_len)

        active = [False] * n_src
        rep_phase: dict[int, float] = {}
        for j, src in enumerate(sources):
            if src.activation_scope == "session":
                active[j] = session_active[j]
            else:
                active[j] = bool(rng.random() < probs[j])
                if plan.subject_index in src.forced_active_subjects:
                    active[j] = True
            if src.kind == "tone" and src.activation_scope == "repetition":
                rep_phase[j] = float(rng.uniform(0.0, 2.0 * np.pi))

        if channel is None:
            observed = list(active)
        else:
            col = channel[:, _event_index(active)]
            obs_index = int(rng.choice(len(col), p=col / col.sum()))
            observed = _active_from_index(obs_index, n_src)

        source_events.append(dict(zip(names, active)))
        observed_events.append(dict(zip(names, observed)))

        rep_click_amps = np.zeros(0)
        mix_rep = np.zeros(rep_len)
        tilt_indices = []
        for j, src in enumerate(sources):
            if not observed[j]:
                continue
            if src.kind == "device-tilt":
                tilt_indices.append(j)
                continue
            if src.kind == "knee":
                wave, rep_click_amps = _render_knee(
                    rng, rep_len, fs, src.waveform_params,
                    unhealthy and world.causal_link_enabled,
                )
            elif src.kind == "tone":
                phase = session_phase.get(j, rep_phase.get(j, 0.0))
                wave = _render_tone(rep_len, fs, src.waveform_params, phase, lo)
            else:
                level = float(src.waveform_params.get("level_db", -40.0))
                if j in day_offsets:
                    level += float(day_offsets[j][plan.session_index])
                wave = _render_broadband(rng, rep_len, fs, src.waveform_params, level)
            components[names[j]][sl] = wave
            mix_rep += wave

        # tilt acts on the mixture of everything else in this repetition
        for j in tilt_indices:
            components[names[j]][sl] = _tilt_residual(
                mix_rep, fs, sources[j].waveform_params, plan.device_id, unhealthy,
            )

        for j, name in enumerate(names):
            if observed[j]:
                seg = components[name][sl]
                component_rms[name].append(float(np.sqrt(np.mean(seg * seg))))
            else:
                component_rms[name].append(0.0)
        knee_amps.append(rep_click_amps)

    noise = rng.normal(0.0, 10.0 ** (world.sensor_noise_db / 20.0), size=total)
    mixture = noise.copy()
    for name in names:
        mixture += components[name]

    truth = GroundTruth(
        source_events=source_events,
        observed_events=observed_events,
        component_rms=component_rms,
        knee_click_amplitudes=knee_amps,
        sensor_noise_rms=float(np.sqrt(np.mean(noise * noise))),
        components=components if keep_components else None,
        sensor_noise=noise if keep_components else None,
    )
    return RecordingSession(
        session_id=plan.session_id,
        subject_id=plan.subject_id,
        side=plan.side,
        device_id=plan.device_id,
        health=plan.health,
        signal=Signal(mixture, fs),
        n_repetitions=n_rep,
        ground_truth=truth,
        metadata=dict(plan.metadata),
    )


def sample_cohort(world: WorldSpec, *, keep_components: bool = False) -> list[RecordingSession]:
    """Render every session of a world.

    Returns sessions in plan order.  Pass keep_components=True to retain
    the per-source waveforms and the noise floor in each ground truth
    (memory scales with sources x session length; the summary RMS values
    are always recorded).
    """
    validate_world(world)
    plans = plan_cohort(world)
    day_offsets = _day_level_offsets(world, len(plans))
    return pmap(
        lambda plan: _render_session(world, plan, day_offsets, keep_components),
        plans,
    )


# ---------------------------------------------------------------------------
# dataset export


def write_dataset(sessions: list[RecordingSession], out_dir, world: WorldSpec) -> Path:
    """Write float32 WAVs, manifest.json and ground_truth.json.

    Output bytes are deterministic for a given (world, sessions) pair:
    JSON is dumped with sorted keys and WAV samples are float32 exact.
    Returns the manifest path.
    """
    from ..dataset import Manifest, SessionRecord, save_manifest, write_wav

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records = []
    truth_sessions: dict[str, dict] = {}
    for sess in sessions:
        wav_name = f"{sess.session_id}.wav"
        write_wav(out_dir / wav_name, sess.signal, encoding="float32")
        records.append(
            SessionRecord(
                session_id=sess.session_id,
                subject_id=sess.subject_id,
                side=sess.side,
                device_id=sess.device_id,
                health_label=sess.health,
                wav_path=wav_name,
                n_repetitions=sess.n_repetitions,
                metadata=dict(sess.metadata),
            )
        )
        truth = sess.ground_truth
        truth_sessions[sess.session_id] = {
            "subject_id": sess.subject_id,
            "side": sess.side,
            "device_id": sess.device_id,
            "health_label": sess.health,
            "repetitions": [
                {
                    "source_event": truth.source_events[r],
                    "observed_event": truth.observed_events[r],
                    "component_rms": {
                        name: truth.component_rms[name][r] for name in truth.component_rms
                    },
                    "n_knee_clicks": int(len(truth.knee_click_amplitudes[r])),
                }
                for r in range(sess.n_repetitions)
            ],
            "sensor_noise_rms": truth.sensor_noise_rms,
        }

    manifest_path = out_dir / "manifest.json"
    save_manifest(Manifest(sessions=records, root=out_dir), manifest_path)
    truth_payload = {"world": world.to_json_dict(), "sessions": truth_sessions}
    (out_dir / "ground_truth.json").write_text(
        json.dumps(truth_payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest_path
