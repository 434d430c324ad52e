"""MetaImage (.mhd + raw) volume I/O and scanner-geometry classification.

Array convention: voxel arrays are indexed ``[z, y, x]`` (slice, row, column),
which matches the x-fastest raw payload order of MetaImage directly.  All
``dims`` tuples in the public API are ``(width, height, depth)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

N_CLASSES = 4

ELEMENT_DTYPES = {
    "MET_UCHAR": np.dtype("<u1"),
    "MET_USHORT": np.dtype("<u2"),
    "MET_FLOAT": np.dtype("<f4"),
}


class FluidClass(enum.IntEnum):
    """Per-voxel label alphabet: background plus the three fluid classes."""

    BACKGROUND = 0
    IRF = 1
    SRF = 2
    PED = 3


FLUIDS = (FluidClass.IRF, FluidClass.SRF, FluidClass.PED)


class Vendor(enum.Enum):
    CIRRUS = "Cirrus"
    SPECTRALIS = "Spectralis"
    TOPCON = "Topcon"

    @property
    def native_geometries(self) -> tuple[tuple[int, int, int], ...]:
        return _NATIVE_GEOMETRIES[self]


# (width, height, depth) of the raw scans each scanner produces.
_NATIVE_GEOMETRIES = {
    Vendor.CIRRUS: ((512, 1024, 128),),
    Vendor.SPECTRALIS: ((512, 496, 49),),
    Vendor.TOPCON: ((512, 885, 128), (512, 650, 128)),
}


def vendor_of(dims: tuple[int, int, int]) -> Vendor | None:
    """Return the scanner whose native geometry matches ``dims``, or None."""
    dims = tuple(int(d) for d in dims)
    for vendor, geometries in _NATIVE_GEOMETRIES.items():
        if dims in geometries:
            return vendor
    return None


@dataclass
class OctVolume:
    """Intensity volume, float32, indexed [z, y, x]."""

    voxels: np.ndarray
    vendor: Vendor | None = None
    spacing: tuple[float, float, float] | None = None
    volume_id: str = ""

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3:
            raise ValueError(f"intensity volume must be 3-D, got shape {self.voxels.shape}")

    @property
    def dims(self) -> tuple[int, int, int]:
        d, h, w = self.voxels.shape
        return (w, h, d)


@dataclass
class LabelVolume:
    """Per-voxel class labels in {0,1,2,3}, uint8, indexed [z, y, x]."""

    voxels: np.ndarray
    volume_id: str = ""

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.uint8)
        if self.voxels.ndim != 3:
            raise ValueError(f"label volume must be 3-D, got shape {self.voxels.shape}")
        if self.voxels.size and int(self.voxels.max()) >= N_CLASSES:
            raise ValidationError(
                f"label volume contains a value outside 0..{N_CLASSES - 1}"
            )

    @property
    def dims(self) -> tuple[int, int, int]:
        d, h, w = self.voxels.shape
        return (w, h, d)


@dataclass
class ProbVolume:
    """Per-class probability field, float32, shape (4, depth, height, width).

    Channel order is Background, IRF, SRF, PED.  Channel sums are expected to
    lie within 1e-5 of 1 at every voxel; ``validate()`` enforces that.
    """

    probs: np.ndarray
    volume_id: str = ""

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float32)
        if self.probs.ndim != 4 or self.probs.shape[0] != N_CLASSES:
            raise ValueError(
                f"probability volume must have shape (4, depth, height, width), got {self.probs.shape}"
            )

    @property
    def dims(self) -> tuple[int, int, int]:
        _, d, h, w = self.probs.shape
        return (w, h, d)

    def validate(self, tol: float = 1e-5) -> None:
        if np.any(self.probs < 0):
            raise ValidationError(f"negative probability in volume '{self.volume_id}'")
        sums = self.probs.sum(axis=0, dtype=np.float64)
        err = float(np.abs(sums - 1.0).max()) if sums.size else 0.0
        if err > tol:
            raise ValidationError(
                f"channel sums deviate from 1 by up to {err:.3g} in volume '{self.volume_id}'"
            )


def _parse_header(path: Path) -> tuple[dict[str, str], int]:
    """Read MetaImage header keys; return them plus the byte offset past the header."""
    header: dict[str, str] = {}
    offset = 0
    with open(path, "rb") as f:
        while True:
            line = f.readline()
            if not line:
                raise FormatError(f"{path}: header ended before ElementDataFile")
            offset += len(line)
            try:
                text = line.decode("ascii").strip()
            except UnicodeDecodeError as e:
                raise FormatError(f"{path}: non-ASCII bytes in header") from e
            if not text:
                continue
            if "=" not in text:
                raise FormatError(f"{path}: malformed header line {text!r}")
            key, value = (part.strip() for part in text.split("=", 1))
            header[key] = value
            if key == "ElementDataFile":
                return header, offset


def _read_raw(path: Path, header: dict[str, str], header_end: int, expected_bytes: int) -> bytes:
    data_file = header["ElementDataFile"]
    if data_file.upper() == "LOCAL":
        with open(path, "rb") as f:
            f.seek(header_end)
            raw = f.read()
        source = path
    else:
        source = path.parent / data_file
        if not source.exists():
            raise FileNotFoundError(f"{path}: raw payload file {source} does not exist")
        raw = source.read_bytes()
    if len(raw) != expected_bytes:
        raise IOError(
            f"{source}: raw payload size mismatch, expected {expected_bytes} bytes, found {len(raw)}"
        )
    return raw


def _load_array(path: Path) -> tuple[np.ndarray, dict[str, str]]:
    """Load a MetaImage file as an array shaped (..., depth, height, width)."""
    path = Path(path)
    header, header_end = _parse_header(path)
    ndims = int(header.get("NDims", "0"))
    if ndims not in (3, 4):
        raise FormatError(f"{path}: NDims must be 3 or 4, got {header.get('NDims')}")
    if "DimSize" not in header:
        raise FormatError(f"{path}: header is missing DimSize")
    dim_size = [int(t) for t in header["DimSize"].split()]
    if len(dim_size) != ndims:
        raise FormatError(f"{path}: DimSize has {len(dim_size)} entries for NDims={ndims}")
    if any(d < 1 for d in dim_size):
        raise FormatError(f"{path}: non-positive DimSize {dim_size}")
    if header.get("CompressedData", "False").lower() == "true":
        raise FormatError(f"{path}: compressed payloads are not supported")
    if header.get("BinaryDataByteOrderMSB", "False").lower() == "true":
        raise FormatError(f"{path}: big-endian payloads are not supported")
    element_type = header.get("ElementType", "")
    dtype = ELEMENT_DTYPES.get(element_type)
    if dtype is None:
        raise FormatError(f"{path}: unsupported ElementType {element_type!r}")

    count = 1
    for d in dim_size:
        count *= d
    raw = _read_raw(path, header, header_end, count * dtype.itemsize)
    data = np.frombuffer(raw, dtype=dtype)
    # DimSize is fastest-first (x, y, z[, c]); numpy C-order wants slowest-first.
    return data.reshape(tuple(reversed(dim_size))), header


def _parse_spacing(header: dict[str, str]) -> tuple[float, float, float] | None:
    text = header.get("ElementSpacing")
    if text is None:
        return None
    parts = [float(t) for t in text.split()]
    return (parts[0], parts[1], parts[2]) if len(parts) >= 3 else None


def read_volume(path: str | Path) -> OctVolume:
    """Read an intensity volume; 8/16-bit unsigned payloads are converted to float32."""
    path = Path(path)
    data, header = _load_array(path)
    if data.ndim != 3:
        raise FormatError(f"{path}: expected a scalar 3-D volume, got NDims=4")
    d, h, w = data.shape
    return OctVolume(
        voxels=data.astype(np.float32),
        vendor=vendor_of((w, h, d)),
        spacing=_parse_spacing(header),
        volume_id=path.stem,
    )


def read_labels(path: str | Path) -> LabelVolume:
    """Read a label volume, rejecting any voxel outside the 0..3 alphabet."""
    path = Path(path)
    data, header = _load_array(path)
    if data.ndim != 3:
        raise FormatError(f"{path}: expected a scalar 3-D label volume, got NDims=4")
    if not np.issubdtype(data.dtype, np.unsignedinteger):
        raise FormatError(f"{path}: label payload must be an unsigned integer type")
    bad = data >= N_CLASSES
    if bad.any():
        z, y, x = (int(i) for i in np.argwhere(bad)[0])
        raise ValidationError(
            f"{path}: label value {int(data[z, y, x])} at voxel (x={x}, y={y}, z={z}) "
            f"outside 0..{N_CLASSES - 1}"
        )
    return LabelVolume(voxels=data.astype(np.uint8), volume_id=path.stem)


def read_prob(path: str | Path) -> ProbVolume:
    """Read a 4-channel probability volume written by :func:`write_volume`."""
    path = Path(path)
    data, header = _load_array(path)
    if data.ndim != 4:
        raise FormatError(f"{path}: expected a 4-channel volume (NDims=4)")
    if data.shape[0] != N_CLASSES:
        raise FormatError(f"{path}: expected {N_CLASSES} channels, got {data.shape[0]}")
    volume_id = path.stem
    if volume_id.endswith("_prob"):
        volume_id = volume_id[: -len("_prob")]
    return ProbVolume(probs=data.astype(np.float32), volume_id=volume_id)


def write_volume(vol: OctVolume | LabelVolume | ProbVolume, path: str | Path) -> None:
    """Write a volume as a MetaImage header plus companion raw file.

    Intensity and probability volumes are stored as MET_FLOAT, labels as
    MET_UCHAR.  Probability volumes are stored channel-major as a 4-D
    MetaImage (DimSize = width height depth 4), so each class plane is a
    contiguous x-fastest block.
    """
    path = Path(path)
    if path.suffix != ".mhd":
        raise ValueError(f"volumes are written as .mhd header + raw pair, got {path.name}")
    if isinstance(vol, ProbVolume):
        data = vol.probs.astype("<f4", copy=False)
        element_type = "MET_FLOAT"
    elif isinstance(vol, LabelVolume):
        data = vol.voxels.astype("<u1", copy=False)
        element_type = "MET_UCHAR"
    elif isinstance(vol, OctVolume):
        data = vol.voxels.astype("<f4", copy=False)
        element_type = "MET_FLOAT"
    else:
        raise TypeError(f"cannot serialize object of type {type(vol).__name__}")

    dim_size = " ".join(str(d) for d in reversed(data.shape))
    raw_name = path.stem + ".raw"
    lines = [
        "ObjectType = Image",
        f"NDims = {data.ndim}",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        "CompressedData = False",
        f"DimSize = {dim_size}",
        f"ElementType = {element_type}",
    ]
    spacing = getattr(vol, "spacing", None)
    if spacing is not None:
        lines.append("ElementSpacing = " + " ".join(repr(float(s)) for s in spacing))
    lines.append(f"ElementDataFile = {raw_name}")
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    np.ascontiguousarray(data).tofile(path.parent / raw_name)
