import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from streetcrop.embedder import (
    REFERENCE_DIM, EmbeddingError, EmbeddingTable, embed_file, embed_images, flip_embedding, flip_lr,
    load_embeddings, reference_embed, resize, save_embeddings,
)
from streetcrop.synth import render_block_image

rasters = st.tuples(st.integers(1, 6), st.integers(1, 6)).flatmap(
    lambda s: arrays(np.uint8, (8 * s[0], 8 * s[1], 3)))


def test_resize_identity():
    img = np.random.default_rng(0).integers(0, 256, (224, 224, 3), dtype=np.uint8)
    assert np.array_equal(resize(img), img)


def test_resize_constant():
    img = np.full((216, 384, 3), (12, 200, 77), dtype=np.uint8)
    out = resize(img)
    assert out.shape == (224, 224, 3) and (out == (12, 200, 77)).all()


def test_resize_checkerboard_to_one_pixel():
    board = np.array([[[0] * 3, [255] * 3], [[255] * 3, [0] * 3]], dtype=np.uint8)
    # bilinear centre sample = mean of the four pixels = 127.5, rounded half to even
    assert resize(board, 1, 1)[0, 0].tolist() == [128, 128, 128]


@given(arrays(np.uint8, (5, 7, 3)))
def test_resize_idempotent_at_target(img):
    once = resize(img)
    assert np.array_equal(resize(once), once)


@given(rasters)
def test_flip_is_involution(img):
    assert np.array_equal(flip_lr(flip_lr(img)), img)


def test_flip_moves_pixel():
    img = np.zeros((4, 6, 3), dtype=np.uint8)
    img[2, 0] = 255
    out = flip_lr(img)
    assert (out[2, 5] == 255).all() and out.sum() == 3 * 255


def test_flip_symmetric_unchanged():
    half = np.random.default_rng(1).integers(0, 256, (8, 4, 3), dtype=np.uint8)
    img = np.concatenate([half, half[:, ::-1]], axis=1)
    assert np.array_equal(flip_lr(img), img)


def test_reference_embed_black_white():
    assert not reference_embed(np.zeros((224, 224, 3), np.uint8)).any()
    assert (reference_embed(np.full((224, 224, 3), 255, np.uint8)) == 1.0).all()
    assert reference_embed(np.zeros((224, 224, 3), np.uint8)).shape == (REFERENCE_DIM,)


@given(rasters)
def test_embed_of_flip_is_column_reversal(img):
    assert np.array_equal(reference_embed(flip_lr(img)), flip_embedding(reference_embed(img)))


def test_render_block_image_roundtrip():
    vec = np.random.default_rng(2).uniform(0, 1, REFERENCE_DIM)
    back = reference_embed(render_block_image(vec))
    assert np.abs(back - vec).max() <= 0.5 / 255 + 1e-12


def test_embed_files(tmp_path):
    from PIL import Image

    rng = np.random.default_rng(3)
    paths = {}
    for k in range(3):
        arr = rng.integers(0, 256, (60, 90, 3), dtype=np.uint8)
        Image.fromarray(arr).save(tmp_path / f"{k}.png")
        paths[f"img{k}"] = f"{k}.png"
    t1 = embed_images(paths, tmp_path)
    t2 = embed_images(paths, tmp_path)
    assert t1.image_ids == ["img0", "img1", "img2"]
    assert np.array_equal(t1.vectors, t2.vectors)
    assert np.array_equal(t1.vectors[0], embed_file(tmp_path / "0.png"))


def test_unsupported_format(tmp_path):
    from PIL import Image

    Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(tmp_path / "x.bmp")
    with pytest.raises(EmbeddingError):
        embed_file(tmp_path / "x.bmp")


def small_table(n=4, d=REFERENCE_DIM):
    v = np.random.default_rng(4).standard_normal((n, d))
    return EmbeddingTable([f"i{k}" for k in range(n)], ["none"] * n, v)


@pytest.mark.parametrize("name", ["e.csv", "e.bin"])
def test_save_load_roundtrip(tmp_path, name):
    t = small_table()
    save_embeddings(tmp_path / name, t)
    back = load_embeddings(tmp_path / name)
    assert back.image_ids == t.image_ids
    tol = 0 if name.endswith(".csv") else 1e-6
    assert np.allclose(back.vectors, t.vectors, atol=tol, rtol=tol)


def test_load_short_row(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("image_id,f0,f1,f2\na,1,2,3\nb,1,2\n")
    with pytest.raises(EmbeddingError, match="row 3"):
        load_embeddings(p)


def test_load_nan(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("image_id,f0,f1\na,1,nan\n")
    with pytest.raises(EmbeddingError, match="row 2"):
        load_embeddings(p)


def test_load_n_rows(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("image_id,f0,f1\n" + "".join(f"r{k},{k},0.5\n" for k in range(7)))
    assert len(load_embeddings(p).samples()) == 7


def test_binary_checksum(tmp_path):
    save_embeddings(tmp_path / "e.bin", small_table())
    raw = bytearray((tmp_path / "e.bin").read_bytes())
    raw[0] ^= 1
    (tmp_path / "e.bin").write_bytes(bytes(raw))
    with pytest.raises(EmbeddingError, match="checksum"):
        load_embeddings(tmp_path / "e.bin")


def test_flipped_uses_stored_rows_when_present():
    t = small_table(2)
    v = np.vstack([t.vectors, t.vectors[::-1] + 1])
    full = EmbeddingTable(["i0", "i1", "i0", "i1"], ["none", "none", "flip_lr", "flip_lr"], v)
    assert np.array_equal(full.flipped(["i0"]), v[2:3])
    assert np.array_equal(t.flipped(["i0"]), flip_embedding(t.vectors[:1]))
