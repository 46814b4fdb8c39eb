"""Week-level splits, embedding files and batch bucketing."""

import numpy as np
import pytest

from nesa import datagen as dg
from nesa.dataset import (
    align_embeddings,
    bucketed_batches,
    load_word_embeddings,
    split_weeks,
)
from nesa.ics import instances_from_events


@pytest.fixture(scope="module")
def instances():
    events, _ = dg.gen_dataset(dg.SyntheticConfig(seed=3, num_users=5,
                                                  weeks_per_user=12))
    return instances_from_events(events)


def week_key(inst):
    return (inst.target_user, inst.iso_year, inst.iso_week)


class TestSplitWeeks:
    def test_partition_preserves_instances(self, instances):
        train, valid, test = split_weeks(instances, seed=0)
        got = sorted(id(i) for i in train + valid + test)
        assert got == sorted(id(i) for i in instances)

    def test_weeks_never_straddle_splits(self, instances):
        train, valid, test = split_weeks(instances, seed=0)
        keys = [set(map(week_key, s)) for s in (train, valid, test)]
        assert not keys[0] & keys[1]
        assert not keys[0] & keys[2]
        assert not keys[1] & keys[2]

    def test_fraction_sizes_at_week_granularity(self, instances):
        train, valid, test = split_weeks(instances, seed=0)
        n = len({week_key(i) for i in instances})
        assert len({week_key(i) for i in train}) == round(0.8 * n)
        assert len({week_key(i) for i in valid}) == round(0.9 * n) - round(0.8 * n)

    def test_deterministic_under_seed(self, instances):
        a = split_weeks(instances, seed=5)
        b = split_weeks(instances, seed=5)
        for sa, sb in zip(a, b):
            assert [week_key(i) for i in sa] == [week_key(i) for i in sb]

    def test_seed_changes_assignment(self, instances):
        a = split_weeks(instances, seed=0)
        b = split_weeks(instances, seed=1)
        assert {week_key(i) for i in a[0]} != {week_key(i) for i in b[0]}

    def test_rejects_bad_fractions(self, instances):
        with pytest.raises(ValueError):
            split_weeks(instances, fractions=(0.5, 0.2, 0.2), seed=0)
        with pytest.raises(ValueError):
            split_weeks(instances, fractions=(1.2, -0.2), seed=0)


class TestEmbeddingFile:
    def write(self, tmp_path, text):
        path = tmp_path / "vectors.txt"
        path.write_text(text, encoding="utf-8")
        return path

    def test_reads_words_and_vectors(self, tmp_path):
        path = self.write(tmp_path, "lunch 1.0 2.0\nmeeting -0.5 0.25\n")
        words, matrix = load_word_embeddings(path)
        assert words == ["lunch", "meeting"]
        np.testing.assert_array_equal(
            matrix, np.array([[1.0, 2.0], [-0.5, 0.25]], dtype=np.float32)
        )

    def test_skips_count_header(self, tmp_path):
        path = self.write(tmp_path, "2 3\na 1 2 3\nb 4 5 6\n")
        words, matrix = load_word_embeddings(path)
        assert words == ["a", "b"]
        assert matrix.shape == (2, 3)

    def test_rejects_ragged_dimensions(self, tmp_path):
        path = self.write(tmp_path, "a 1 2\nb 1 2 3\n")
        with pytest.raises(ValueError, match="dimension"):
            load_word_embeddings(path)

    def test_rejects_bad_number(self, tmp_path):
        path = self.write(tmp_path, "a 1 x\n")
        with pytest.raises(ValueError):
            load_word_embeddings(path)

    def test_rejects_empty_file(self, tmp_path):
        path = self.write(tmp_path, "\n")
        with pytest.raises(ValueError):
            load_word_embeddings(path)

    def test_align_fills_missing_with_zeros(self):
        words = ["lunch", "gym"]
        matrix = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        out = align_embeddings(["gym", "standup", "lunch"], words, matrix)
        np.testing.assert_array_equal(
            out, np.array([[3, 4], [0, 0], [1, 2]], dtype=np.float32)
        )


class TestBucketedBatches:
    def test_covers_every_instance_once(self, instances):
        batches = list(bucketed_batches(instances, 16))
        flat = [i for b in batches for i in b]
        assert sorted(map(id, flat)) == sorted(map(id, instances))
        assert all(len(b) <= 16 for b in batches)

    def test_unshuffled_order_groups_context_sizes(self, instances):
        sizes = [len(i.context)
                 for b in bucketed_batches(instances, 16) for i in b]
        assert sizes == sorted(sizes)

    def test_shuffle_is_deterministic_under_seed(self, instances):
        def run(seed):
            rng = np.random.Generator(np.random.Philox(seed))
            return [[id(i) for i in b]
                    for b in bucketed_batches(instances, 16, rng)]
        assert run(3) == run(3)
        assert run(3) != run(4)

    def test_rejects_bad_batch_size(self, instances):
        with pytest.raises(ValueError):
            list(bucketed_batches(instances, 0))
