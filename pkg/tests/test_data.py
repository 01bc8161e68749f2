import unicodedata

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morphseq import data
from morphseq.data import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    CharVocabulary,
    FeatureVocabulary,
    InflectionExample,
    ParseError,
    build_vocabs,
    encode_batch,
    make_batches,
    parse_task1_line,
)


class TestParsing:
    def test_basic_line(self):
        ex = parse_task1_line("torment\ttorments\tV;3;SG;PRS")
        assert ex == InflectionExample("torment", "torments", ("V", "3", "SG", "PRS"))

    def test_identity_pair(self):
        ex = parse_task1_line("a\ta\tN;SG")
        assert ex.lemma == ex.form == "a"

    def test_two_fields_error_names_line(self):
        with pytest.raises(ParseError, match="line 17"):
            parse_task1_line("lemma\tform", line_number=17)

    def test_empty_field_rejected(self):
        with pytest.raises(ParseError, match="empty"):
            parse_task1_line("\tform\tV", line_number=1)

    def test_empty_feature_token_rejected(self):
        with pytest.raises(ParseError, match="feature"):
            parse_task1_line("a\tb\tV;;SG", line_number=2)

    def test_nfc_normalization_applied_once(self):
        decomposed = "amo" + "̄"  # o + combining macron
        ex = parse_task1_line(f"amo\t{decomposed}\tN;SG")
        assert ex.form == unicodedata.normalize("NFC", decomposed)
        assert ex.form.endswith("ō")  # precomposed o-macron

    def test_round_trip_preserves_wellformed_lines(self):
        line = "amō\tamāre\tV;PRS;1;SG"
        ex = parse_task1_line(line)
        assert ex.to_line() == unicodedata.normalize("NFC", line)
        assert parse_task1_line(ex.to_line()) == ex

    @given(
        st.text(alphabet="abcāē", min_size=1, max_size=6),
        st.text(alphabet="abcāē", min_size=1, max_size=8),
        st.lists(st.sampled_from(["V", "N", "SG", "PL", "3"]), min_size=1, max_size=3),
    )
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, lemma, form, feats):
        ex = InflectionExample(lemma, form, tuple(feats))
        assert parse_task1_line(ex.to_line()) == ex


class TestFiles:
    def test_read_and_reject_malformed(self, tmp_path):
        path = tmp_path / "train.tsv"
        path.write_text("a\tb\tV\nbad line\n", encoding="utf-8")
        with pytest.raises(ParseError, match="line 2"):
            data.read_task1_file(path)

    def test_covered_file_variants(self, tmp_path):
        path = tmp_path / "covered.tsv"
        path.write_text("kato\tN;PL\nhundo\t_\tN;SG\nbirdo\tbirdon\tN;ACC\n", encoding="utf-8")
        rows = data.read_covered_file(path)
        assert rows == [
            ("kato", ("N", "PL")),
            ("hundo", ("N", "SG")),
            ("birdo", ("N", "ACC")),
        ]

    def test_write_predictions_shape(self, tmp_path):
        path = tmp_path / "pred.tsv"
        data.write_predictions(path, [("kato", "katojn", ("N", "PL", "ACC"))])
        assert path.read_text(encoding="utf-8") == "kato\tkatojn\tN;PL;ACC\n"


class TestVocabularies:
    def test_single_example_vocab(self):
        cv, fv = build_vocabs([InflectionExample("ab", "ba", ("X",))])
        assert cv.chars == ["<pad>", "<bos>", "<eos>", "<unk>", "a", "b"]
        assert fv.tokens == ["<unk>", "X"]
        assert (PAD_ID, BOS_ID, EOS_ID, UNK_ID) == (0, 1, 2, 3)

    def test_round_trip_for_known_characters(self):
        cv, _ = build_vocabs([InflectionExample("abc", "cba", ("X",))])
        assert cv.decode(cv.encode("abcabc")) == "abcabc"

    def test_unknown_character_maps_to_unk_and_counts(self):
        cv, _ = build_vocabs([InflectionExample("ab", "ba", ("X",))])
        assert cv.encode("axb") == [cv.encode("a")[0], UNK_ID, cv.encode("b")[0]]
        assert cv.unk_count == 1

    def test_every_training_character_covered(self):
        examples = [InflectionExample("amō", "amāre", ("V",))]
        cv, _ = build_vocabs(examples)
        for ch in "amōāre":
            assert ch in cv

    def test_deterministic_rebuild(self):
        examples = [
            InflectionExample("kato", "katoj", ("N", "PL")),
            InflectionExample("hundo", "hundon", ("N", "SG", "ACC")),
        ]
        cv1, fv1 = build_vocabs(examples)
        cv2, fv2 = build_vocabs(examples)
        assert cv1.chars == cv2.chars
        assert fv1.tokens == fv2.tokens

    def test_unknown_feature_token_warns_and_maps_to_unk(self):
        _, fv = build_vocabs([InflectionExample("a", "b", ("X",))])
        assert fv.ids_of(["Y"]) == [0]
        assert fv.unk_count == 1

    def test_multihot_is_binary_and_order_insensitive(self):
        _, fv = build_vocabs([InflectionExample("a", "b", ("X", "Y"))])
        np.testing.assert_array_equal(fv.multihot(("X", "Y")), fv.multihot(("Y", "X")))
        assert set(np.unique(fv.multihot(("X",)))) <= {0.0, 1.0}

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            build_vocabs([])


class TestBatching:
    def _examples(self, n):
        return [
            InflectionExample(f"a{'b' * (i % 4)}", f"b{'a' * (i % 3)}", ("X",)) for i in range(n)
        ]

    def test_batch_sizes_130_into_64(self):
        examples = self._examples(130)
        cv, fv = build_vocabs(examples)
        batches = make_batches(examples, cv, fv, 64, np.random.default_rng(0))
        assert [b.size for b in batches] == [64, 64, 2]

    def test_same_seed_same_composition(self):
        examples = self._examples(30)
        cv, fv = build_vocabs(examples)
        a = make_batches(examples, cv, fv, 8, np.random.default_rng(9))
        b = make_batches(examples, cv, fv, 8, np.random.default_rng(9))
        for ba, bb in zip(a, b):
            np.testing.assert_array_equal(ba.lemma, bb.lemma)
            np.testing.assert_array_equal(ba.form, bb.form)

    def test_padding_and_eos_layout(self):
        examples = [InflectionExample("ab", "b", ("X",)), InflectionExample("a", "baa", ("X",))]
        cv, fv = build_vocabs(examples)
        batch = encode_batch(examples, cv, fv)
        a, b = cv.encode("a")[0], cv.encode("b")[0]
        np.testing.assert_array_equal(batch.lemma, [[a, b, EOS_ID], [a, EOS_ID, PAD_ID]])
        np.testing.assert_array_equal(batch.lemma_mask, [[1, 1, 1], [1, 1, 0]])
        np.testing.assert_array_equal(batch.form, [[b, EOS_ID, PAD_ID, PAD_ID], [b, a, a, EOS_ID]])

    def test_batch_size_must_be_positive(self):
        examples = self._examples(3)
        cv, fv = build_vocabs(examples)
        with pytest.raises(ValueError, match="batch_size"):
            make_batches(examples, cv, fv, 0, np.random.default_rng(0))
