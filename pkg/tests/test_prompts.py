"Tests for quality prompts and their embeddings"
import struct

import numpy as np
import pytest  # type: ignore

from ouiqa import (
    ADJECTIVES,
    EmbeddingFileError,
    PromptEmbedding,
    RecipeError,
    SeverityRangeError,
    build_prompt,
    embed_prompt,
    embed_rendered,
    embed_text,
    load_embeddings,
    make_recipe,
    parse_prompt,
    save_embeddings,
    severity_adjective,
)
from ouiqa.distort import Recipe
from ouiqa.prompts import token_vector
from ouiqa.util import fnv1a_64

# pylint: disable=invalid-name


def cosine(one, other):
    return float(one.vector @ other.vector)


class TestPrompts:
    """Rendering and parsing prompts"""

    def test_single_distortion(self):
        recipe = make_recipe([("gaussian-blur", 1.4)])
        prompt = build_prompt(recipe, "a red barn")
        assert prompt.rendered == (
            "This photo has a distortion such as gaussian blur. "
            "The quality is excellent. This image shows a red barn."
        )
        assert prompt.distortion_names == ("gaussian-blur",)
        assert prompt.quality_adjective == "excellent"

    def test_multiple_distortions(self):
        recipe = make_recipe([("gaussian-blur", 2.0), ("jpeg-like", 3.0), ("gaussian-noise", 5.0)])
        prompt = build_prompt(recipe)
        assert "multiple distortions such as gaussian blur, jpeg like, gaussian noise." in (
            prompt.rendered
        )
        assert prompt.quality_adjective == "bad"
        assert prompt.rendered.endswith("This image shows an image.")

    def test_prompts_parse_back(self):
        recipe = make_recipe([("pixelate", 3.0), ("motion-blur", 2.0)])
        prompt = build_prompt(recipe, "two dogs, one cat")
        clause, names, adjective, caption = parse_prompt(prompt.rendered)
        assert clause == "multiple distortions"
        assert names == ["pixelate", "motion blur"]
        assert adjective == prompt.quality_adjective == "average"
        assert caption == "two dogs, one cat"

    def test_not_a_prompt(self):
        with pytest.raises(ValueError):
            parse_prompt("A nice photo.")

    def test_empty_recipe(self):
        with pytest.raises(RecipeError):
            build_prompt(Recipe(steps=(), seed=0, severity=0.0))


class TestAdjectives:
    """Severity bins"""

    @pytest.mark.parametrize(
        "severity,adjective",
        [
            (0.0, "excellent"),
            (0.19, "excellent"),
            (0.2, "good"),
            (0.5, "average"),
            (0.6, "poor"),
            (0.8, "bad"),
            (1.0, "bad"),
        ],
    )
    def test_bins(self, severity, adjective):
        assert severity_adjective(severity) == adjective

    def test_monotone(self):
        ranks = [ADJECTIVES.index(severity_adjective(d)) for d in np.linspace(0, 1, 101)]
        assert ranks == sorted(ranks)
        assert set(ranks) == set(range(5))

    def test_out_of_range(self):
        with pytest.raises(SeverityRangeError):
            severity_adjective(1.2)
        with pytest.raises(SeverityRangeError):
            severity_adjective(-0.1)


class TestEmbeddings:
    """Synthetic prompt embeddings"""

    def test_fnv_reference_values(self):
        assert fnv1a_64("") == 0xCBF29CE484222325
        assert fnv1a_64("a") == 0xAF63DC4C8601EC8C

    def test_token_vector_replays_generator(self):
        expected = np.random.default_rng(fnv1a_64("blur") ^ 5).standard_normal(16)
        assert np.array_equal(token_vector("blur", 16, 5), expected / np.linalg.norm(expected))

    def test_unit_norm_and_determinism(self):
        prompt = build_prompt(make_recipe([("jpeg-like", 4.0)]), "a harbour")
        one = embed_prompt(prompt, 64, 3)
        other = embed_prompt(prompt, 64, 3)
        assert one.width == 64
        assert np.linalg.norm(one.vector) == pytest.approx(1.0, abs=1e-6)
        assert np.array_equal(one.vector, other.vector)

    def test_vocabulary_seed_changes_the_vectors(self):
        prompt = build_prompt(make_recipe([("jpeg-like", 4.0)]))
        one, other = embed_prompt(prompt, 32, 0), embed_prompt(prompt, 32, 1)
        assert not np.array_equal(one.vector, other.vector)

    def test_adjective_changes_the_embedding(self):
        mild = build_prompt(make_recipe([("gaussian-blur", 1.0)]), "a field")
        harsh = build_prompt(make_recipe([("gaussian-blur", 5.0)]), "a field")
        assert mild.rendered.replace("excellent", "bad") == harsh.rendered
        assert cosine(embed_prompt(mild), embed_prompt(harsh)) < 1.0

    def test_rendered_prompts_embed_like_prompts(self):
        prompt = build_prompt(make_recipe([("pixelate", 2.0)]), "a bridge")
        assert np.array_equal(embed_rendered(prompt.rendered).vector, embed_prompt(prompt).vector)

    def test_unrelated_texts_are_nearly_orthogonal(self):
        """Texts without common tokens: |cos| averages about 0.1 in 64 dimensions"""
        similarities = []
        for index in range(200):
            one = embed_text(" ".join("w{}a{}".format(index, k) for k in range(6)))
            other = embed_text(" ".join("w{}b{}".format(index, k) for k in range(6)))
            similarities.append(abs(cosine(one, other)))
        similarities = np.array(similarities)
        assert similarities.mean() < 0.13
        assert np.mean(similarities < 0.3) > 0.95

    def test_width_too_small(self):
        with pytest.raises(ValueError):
            embed_text("some words", text_width=4)

    def test_text_without_tokens(self):
        with pytest.raises(ValueError):
            embed_text("... !!")


class TestEmbeddingFiles:
    """HRQE files"""

    def write(self, path, rows, width, magic=b"HRQE", extra=b""):
        chunks = [magic, struct.pack("<III", 1, len(rows), width)]
        for key, values in rows:
            encoded = key.encode("utf8")
            chunks.append(struct.pack("<H", len(encoded)) + encoded)
            chunks.append(struct.pack("<{}f".format(width), *values))
        with open(path, "wb") as stream:
            stream.write(b"".join(chunks) + extra)
        return path

    def test_empty_file(self, tmp_path):
        path = self.write(str(tmp_path / "empty.hrqe"), [], 0)
        assert load_embeddings(path) == {}

    def test_known_rows(self, tmp_path):
        path = self.write(
            str(tmp_path / "two.hrqe"), [("r0", [0.5, 0.5, 0.5, 0.5]), ("r1", [0, 0, 3, 4])], 4
        )
        table = load_embeddings(path, expected_width=4)
        assert list(table) == ["r0", "r1"]
        assert table["r0"].vector.tolist() == [0.5, 0.5, 0.5, 0.5]
        assert table["r1"].vector == pytest.approx([0.0, 0.0, 0.6, 0.8])

    def test_save_load_save(self, tmp_path):
        table = {
            "a": PromptEmbedding(np.array([1.0, 0.0, 0.0])),
            "b": PromptEmbedding(np.array([0.0, -1.0, 0.0])),
        }
        first = str(tmp_path / "first.hrqe")
        second = str(tmp_path / "second.hrqe")
        save_embeddings(first, table)
        save_embeddings(second, load_embeddings(first))
        with open(first, "rb") as one, open(second, "rb") as other:
            assert one.read() == other.read()

    def test_width_mismatch(self, tmp_path):
        path = self.write(str(tmp_path / "w.hrqe"), [("r0", [1.0] + [0.0] * 7)], 8)
        with pytest.raises(EmbeddingFileError):
            load_embeddings(path, expected_width=16)

    def test_bad_magic(self, tmp_path):
        path = self.write(str(tmp_path / "m.hrqe"), [("r0", [1.0, 0.0])], 2, magic=b"HRQM")
        with pytest.raises(EmbeddingFileError):
            load_embeddings(path)

    def test_truncated_and_trailing(self, tmp_path):
        path = self.write(str(tmp_path / "t.hrqe"), [("r0", [1.0, 0.0])], 2)
        with open(path, "rb") as stream:
            content = stream.read()
        with open(path, "wb") as stream:
            stream.write(content[:-2])
        with pytest.raises(EmbeddingFileError):
            load_embeddings(path)
        path = self.write(str(tmp_path / "x.hrqe"), [("r0", [1.0, 0.0])], 2, extra=b"\x00")
        with pytest.raises(EmbeddingFileError):
            load_embeddings(path)
