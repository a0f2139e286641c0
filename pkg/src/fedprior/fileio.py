"""On-disk formats: ri-planes complex arrays, bit-packed mask containers,
npz parameter archives, and acquisition bundles.

Complex arrays are stored as two stacked real planes (real then imaginary),
row-major, with a JSON sidecar recording shape, dtype, and layout. Masks use
a small binary header followed by the bit-packed pattern.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import NotFoundError, ShapeError
from .imaging import CoilSensitivities, ImagingOperator, KSpaceAcquisition, SamplingMask

_MASK_MAGIC = b"CMSK"
_DENSITY_CODES = {"variable": 0, "uniform": 1}
_DENSITY_NAMES = {v: k for k, v in _DENSITY_CODES.items()}


def save_complex_array(path, arr: np.ndarray) -> None:
    """Write a complex array as stacked (real, imag) planes + JSON sidecar."""
    path = Path(path)
    arr = np.asarray(arr)
    if not np.iscomplexobj(arr):
        arr = arr.astype(np.complex64)
    real_dtype = np.float32 if arr.dtype == np.complex64 else np.float64
    planes = np.stack([arr.real.astype(real_dtype), arr.imag.astype(real_dtype)])
    path.write_bytes(np.ascontiguousarray(planes).tobytes())
    sidecar = {
        "shape": list(arr.shape),
        "dtype": np.dtype(real_dtype).name,
        "layout": "ri-planes",
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar))


def load_complex_array(path) -> np.ndarray:
    path = Path(path)
    sidecar_path = Path(str(path) + ".json")
    if not path.exists() or not sidecar_path.exists():
        raise NotFoundError(f"missing array file or sidecar for {path}")
    meta = json.loads(sidecar_path.read_text())
    if meta.get("layout") != "ri-planes":
        raise ShapeError(f"unsupported layout {meta.get('layout')!r}")
    shape = tuple(meta["shape"])
    dtype = np.dtype(meta["dtype"])
    planes = np.frombuffer(path.read_bytes(), dtype=dtype).reshape((2, *shape))
    out = planes[0] + 1j * planes[1]
    return out.astype(np.complex64 if dtype == np.float32 else np.complex128)


def save_mask(path, mask: SamplingMask) -> None:
    """Binary mask container: header {H, W, rate, density, cal, seed} +
    row-major bit-packed pattern."""
    height, width = mask.shape
    header = _MASK_MAGIC + struct.pack(
        "<IIdBIq",
        height,
        width,
        mask.rate,
        _DENSITY_CODES[mask.density],
        mask.calibration_lines,
        mask.seed,
    )
    packed = np.packbits(mask.pattern.reshape(-1))
    Path(path).write_bytes(header + packed.tobytes())


def load_mask(path) -> SamplingMask:
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"mask file {path} not found")
    blob = path.read_bytes()
    if blob[:4] != _MASK_MAGIC:
        raise ShapeError(f"{path} is not a mask container")
    header_size = struct.calcsize("<IIdBIq")
    height, width, rate, density_code, cal, seed = struct.unpack(
        "<IIdBIq", blob[4 : 4 + header_size]
    )
    bits = np.unpackbits(
        np.frombuffer(blob[4 + header_size :], dtype=np.uint8), count=height * width
    )
    pattern = bits.astype(bool).reshape(height, width)
    return SamplingMask(
        pattern=pattern,
        rate=rate,
        density=_DENSITY_NAMES[density_code],
        calibration_lines=cal,
        seed=seed,
    )


def save_param_arrays(path, arrays: Dict[str, np.ndarray], metadata: Optional[dict] = None) -> None:
    """Write named parameter arrays (plus JSON metadata) to an npz archive."""
    payload = dict(arrays)
    if metadata is not None:
        payload["__metadata__"] = np.frombuffer(
            json.dumps(metadata).encode("utf-8"), dtype=np.uint8
        )
    np.savez(path, **payload)


def load_param_arrays(path) -> Tuple[Dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"parameter archive {path} not found")
    with np.load(path) as archive:
        arrays = {k: archive[k] for k in archive.files if k != "__metadata__"}
        metadata = {}
        if "__metadata__" in archive.files:
            metadata = json.loads(archive["__metadata__"].tobytes().decode("utf-8"))
    return arrays, metadata


def serialize_param_arrays(arrays: Dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def deserialize_param_arrays(blob: bytes) -> Dict[str, np.ndarray]:
    with np.load(io.BytesIO(blob)) as archive:
        return {k: archive[k] for k in archive.files}


def save_acquisition(directory, acq: KSpaceAcquisition, reference: Optional[np.ndarray] = None) -> None:
    """Persist an acquisition bundle: k-space, mask, coil maps, optional
    fully-sampled reference image."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    samples = acq.samples.detach().cpu().numpy()
    save_complex_array(directory / "kspace.bin", samples)
    save_mask(directory / "mask.msk", acq.operator.mask)
    meta = {"image_shape": list(acq.operator.image_shape), "n_coils": acq.operator.n_coils}
    if acq.operator.coils is not None:
        save_complex_array(directory / "coils.bin", acq.operator.coils.maps)
        meta["coils"] = "coils.bin"
    if reference is not None:
        save_complex_array(directory / "reference.bin", np.asarray(reference))
        meta["reference"] = "reference.bin"
    (directory / "meta.json").write_text(json.dumps(meta))


def load_acquisition(directory) -> Tuple[KSpaceAcquisition, Optional[np.ndarray]]:
    import torch

    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise NotFoundError(f"acquisition bundle {directory} not found")
    meta = json.loads(meta_path.read_text())
    mask = load_mask(directory / "mask.msk")
    coils = None
    if "coils" in meta:
        coils = CoilSensitivities(maps=load_complex_array(directory / meta["coils"]))
    op = ImagingOperator(mask=mask, coils=coils, image_shape=tuple(meta["image_shape"]))
    samples = torch.from_numpy(load_complex_array(directory / "kspace.bin"))
    reference = None
    if "reference" in meta:
        reference = load_complex_array(directory / meta["reference"])
    return KSpaceAcquisition(samples=samples, operator=op), reference
