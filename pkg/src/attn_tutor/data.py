"""Procedural shapes-on-a-grid VQA dataset with exact reference attention.

Scenes are colored shapes snapped to a G x G lattice over the image, so
the cells containing the queried object are known exactly and serve as
the reference attention map. Questions are two tokens: a template id
(color / count / existence) and a shape token. Answers share one class
space: 6 colors, counts 0..3, no/yes.

Container format "AVQD1" (little-endian): magic, u32 n_samples,
u32 image_size, u32 grid, u32 question_len, u32 vocab_size,
u32 n_classes, u64 seed; per record u32 question tokens, u32 answer,
f64 gt_attention (G*G), f64 image (H*W*3); u32 CRC32 trailer over all
preceding bytes.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

MAGIC = b"AVQD1"

SHAPES = ("circle", "square", "triangle")
COLOR_NAMES = ("red", "green", "blue", "yellow", "magenta", "cyan")
COLOR_RGB = np.array(
    [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
    ]
)
TEMPLATES = ("color", "count", "exist")
MAX_COUNT = 3
QUESTION_LEN = 2
VOCAB_SIZE = len(TEMPLATES) + len(SHAPES)
ANSWER_NAMES = COLOR_NAMES + ("0", "1", "2", "3", "no", "yes")
N_CLASSES = len(ANSWER_NAMES)

# answer class ids per template
_COLOR_ANSWERS = tuple(range(6))
_COUNT_ANSWERS = tuple(range(6, 10))
_EXIST_ANSWERS = (10, 11)  # no, yes
_TEMPLATE_ANSWERS = (_COLOR_ANSWERS, _COUNT_ANSWERS, _EXIST_ANSWERS)

_MAX_SCENE_OBJECTS = MAX_COUNT + 2  # queried objects plus distractors


class ContainerError(ValueError):
    """Malformed dataset container: bad magic, truncation, or checksum."""


@dataclass(frozen=True)
class DatasetSpec:
    n_samples: int
    image_size: int = 28
    grid: int = 7
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 0:
            raise ValueError("n_samples must not be negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if self.image_size % self.grid != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by grid {self.grid}"
            )
        if self.image_size // self.grid < 3:
            raise ValueError("cells narrower than 3 pixels cannot render shapes")
        if self.grid * self.grid < _MAX_SCENE_OBJECTS:
            raise ValueError(
                f"grid {self.grid}x{self.grid} too small for up to "
                f"{_MAX_SCENE_OBJECTS} objects per scene"
            )


@dataclass
class VqaSample:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    question: np.ndarray  # (QUESTION_LEN,) token ids
    answer: int
    gt_attention: np.ndarray  # (G, G) on the simplex


@dataclass
class Dataset:
    spec: DatasetSpec
    samples: list


def _shape_mask(shape_id, cell):
    yy, xx = np.indices((cell, cell))
    if SHAPES[shape_id] == "square":
        return np.ones((cell, cell), dtype=bool)
    if SHAPES[shape_id] == "circle":
        ctr = (cell - 1) / 2.0
        r = cell / 2.0 - 0.1
        return (yy - ctr) ** 2 + (xx - ctr) ** 2 <= r * r
    return xx <= yy  # triangle: lower-left half plus the diagonal


def _render(objects, image_size, grid):
    cell = image_size // grid
    img = np.zeros((image_size, image_size, 3))
    for shape_id, color_id, row, col in objects:
        mask = _shape_mask(shape_id, cell)
        tile = img[row * cell:(row + 1) * cell, col * cell:(col + 1) * cell]
        tile[mask] = COLOR_RGB[color_id]
    return img


# Color questions carry half the mix: localized class evidence makes them
# the informative case for attention supervision, while count evidence is
# diffuse for small models. Cycle length stays coprime with the 1-in-5
# holdout stride so every split sees every template.
_TEMPLATE_CYCLE = (0, 0, 1, 2)
_MAX_DISTRACTORS = 2


def _assignment(index):
    """Template and answer for one sample index, balanced round-robin."""
    template = _TEMPLATE_CYCLE[index % len(_TEMPLATE_CYCLE)]
    answers = _TEMPLATE_ANSWERS[template]
    answer = answers[(index // len(_TEMPLATE_CYCLE)) % len(answers)]
    return template, answer


def _build_sample(spec, index):
    template, answer = _assignment(index)
    rng = np.random.default_rng([spec.seed, index])
    g = spec.grid
    qshape = int(rng.integers(len(SHAPES)))

    if template == 0:  # color of the (single) queried shape
        queried = [(qshape, answer)]
    elif template == 1:  # count of the queried shape, colors free
        k = answer - _COUNT_ANSWERS[0]
        queried = [(qshape, int(rng.integers(6))) for _ in range(k)]
    else:  # existence: any number of instances keeps the answer unique
        if answer == _EXIST_ANSWERS[1]:
            k = int(rng.integers(1, MAX_COUNT + 1))
            queried = [(qshape, int(rng.integers(6))) for _ in range(k)]
        else:
            queried = []

    other_shapes = [s for s in range(len(SHAPES)) if s != qshape]
    distractors = [
        (other_shapes[int(rng.integers(len(other_shapes)))], int(rng.integers(6)))
        for _ in range(int(rng.integers(0, _MAX_DISTRACTORS + 1)))
    ]

    n_objects = len(queried) + len(distractors)
    cells = rng.choice(g * g, size=n_objects, replace=False)
    objects = [
        (shape, color, int(c) // g, int(c) % g)
        for (shape, color), c in zip(queried + distractors, cells)
    ]

    gt = np.zeros((g, g))
    for shape, color, row, col in objects[: len(queried)]:
        gt[row, col] = 1.0
    if gt.sum() > 0:
        gt /= gt.sum()
    else:
        gt[:] = 1.0 / (g * g)  # nothing to attend: uniform fallback

    image = _render(objects, spec.image_size, g)
    question = np.array([template, len(TEMPLATES) + qshape], dtype=np.int64)
    return VqaSample(image=image, question=question, answer=int(answer), gt_attention=gt)


def generate(spec):
    """Deterministic dataset; each sample derives its own seed from (seed, index)."""
    if spec.n_samples < 1:
        raise ValueError("generation needs n_samples >= 1")
    return Dataset(spec=spec, samples=[_build_sample(spec, i) for i in range(spec.n_samples)])


def write_container(path, dataset):
    spec = dataset.spec
    parts = [
        MAGIC,
        struct.pack(
            "<6IQ",
            spec.n_samples,
            spec.image_size,
            spec.grid,
            QUESTION_LEN,
            VOCAB_SIZE,
            N_CLASSES,
            spec.seed,
        ),
    ]
    for s in dataset.samples:
        parts.append(struct.pack(f"<{QUESTION_LEN}I", *(int(t) for t in s.question)))
        parts.append(struct.pack("<I", s.answer))
        parts.append(np.ascontiguousarray(s.gt_attention, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(s.image, dtype="<f8").tobytes())
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


def _take(buf, offset, nbytes, what):
    if offset + nbytes > len(buf):
        raise ContainerError(
            f"truncated container: needed {nbytes} bytes for {what} at byte "
            f"{offset}, file has {len(buf)}"
        )
    return buf[offset:offset + nbytes], offset + nbytes


def read_container(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    off = 0
    magic, off = _take(buf, off, len(MAGIC), "magic")
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}, expected {MAGIC!r}")
    header, off = _take(buf, off, struct.calcsize("<6IQ"), "header")
    n, image_size, grid, qlen, vocab, classes, seed = struct.unpack("<6IQ", header)
    if qlen != QUESTION_LEN or vocab != VOCAB_SIZE or classes != N_CLASSES:
        raise ContainerError(
            f"unsupported layout: question_len={qlen} vocab={vocab} classes={classes}"
        )
    samples = []
    for _ in range(n):
        qbytes, off = _take(buf, off, 4 * qlen, "question")
        question = np.array(struct.unpack(f"<{qlen}I", qbytes), dtype=np.int64)
        abytes, off = _take(buf, off, 4, "answer")
        answer = struct.unpack("<I", abytes)[0]
        gbytes, off = _take(buf, off, 8 * grid * grid, "gt_attention")
        gt = np.frombuffer(gbytes, dtype="<f8").reshape(grid, grid).copy()
        ibytes, off = _take(buf, off, 8 * image_size * image_size * 3, "image")
        image = np.frombuffer(ibytes, dtype="<f8").reshape(image_size, image_size, 3).copy()
        samples.append(VqaSample(image=image, question=question, answer=int(answer), gt_attention=gt))
    crc_bytes, off = _take(buf, off, 4, "checksum")
    if off != len(buf):
        raise ContainerError(f"{len(buf) - off} trailing bytes after checksum")
    expect = struct.unpack("<I", crc_bytes)[0]
    actual = zlib.crc32(buf[:-4])
    if actual != expect:
        raise ContainerError(f"checksum mismatch: stored {expect:#010x}, computed {actual:#010x}")
    spec = DatasetSpec(n_samples=n, image_size=image_size, grid=grid, seed=seed)
    return Dataset(spec=spec, samples=samples)


def export_gt_csv(dataset, path):
    """Debug dump of reference attention maps, one row per sample."""
    g = dataset.spec.grid
    cols = ["sample", "template", "shape", "answer"] + [f"cell_{i}" for i in range(g * g)]
    lines = [",".join(cols)]
    for idx, s in enumerate(dataset.samples):
        row = [
            str(idx),
            TEMPLATES[int(s.question[0])],
            SHAPES[int(s.question[1]) - len(TEMPLATES)],
            ANSWER_NAMES[s.answer],
        ] + [repr(float(v)) for v in s.gt_attention.reshape(-1)]
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
