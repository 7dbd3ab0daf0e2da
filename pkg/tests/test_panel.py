import json

import numpy as np
import pytest

from dtebounds.errors import (
    EmptyGroup,
    HeavyTies,
    MissingColumn,
    NoVariationInTreatment,
    NonBinaryTreatment,
    NonNumericOutcome,
)
from dtebounds.panel import ColumnMap, from_arrays, load_panel, split_by_group

SCHEMA = ColumnMap(id="uid", y_t="y2011", y_tm1="y2007", y_tm2="y2003", treated="disp")


def write_csv(tmp_path, rows, header="uid,y2011,y2007,y2003,disp"):
    path = tmp_path / "panel.csv"
    path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")
    return path


class TestLoadPanel:
    def test_basic_counts(self, tmp_path):
        path = write_csv(
            tmp_path,
            ["a,1.0,2.0,3.0,1", "b,1.5,2.5,3.5,1", "c,0.5,1.7,2.9,0", "d,0.6,1.8,3.1,0"],
        )
        data = load_panel(path, SCHEMA)
        assert data.n == 4
        assert data.p_treated == 0.5
        assert data.covariate_names == ()

    def test_missing_cell_rejected(self, tmp_path):
        path = write_csv(
            tmp_path,
            ["a,1.0,2.0,,1", "b,1.5,2.5,3.5,1", "c,0.5,1.7,2.9,0", "d,0.6,1.8,3.1,0"],
        )
        report = tmp_path / "rejects.jsonl"
        data = load_panel(path, SCHEMA, report_path=report)
        assert data.n == 3
        assert len(data.rejections) == 1
        lines = report.read_text().strip().splitlines()
        rec = json.loads(lines[0])
        assert rec["id"] == "a"
        assert "y2003" in rec["missing_or_invalid"]

    def test_no_variation(self, tmp_path):
        path = write_csv(
            tmp_path, ["a,1.0,2.0,3.0,0", "b,1.5,2.5,3.5,0", "c,0.5,1.7,2.9,0"]
        )
        with pytest.raises(NoVariationInTreatment):
            load_panel(path, SCHEMA)

    def test_missing_column(self, tmp_path):
        path = write_csv(tmp_path, ["a,1.0,2.0,1"], header="uid,y2011,y2007,disp")
        with pytest.raises(MissingColumn):
            load_panel(path, SCHEMA)

    def test_non_binary_treatment(self, tmp_path):
        path = write_csv(
            tmp_path, ["a,1.0,2.0,3.0,2", "b,1.5,2.5,3.5,1", "c,0.5,1.7,2.9,0"]
        )
        with pytest.raises(NonBinaryTreatment):
            load_panel(path, SCHEMA)

    def test_non_numeric_outcome_column(self, tmp_path):
        path = write_csv(
            tmp_path, ["a,low,2.0,3.0,1", "b,high,2.5,3.5,1", "c,mid,1.7,2.9,0"]
        )
        with pytest.raises(NonNumericOutcome):
            load_panel(path, SCHEMA)

    def test_load_deterministic(self, tmp_path):
        rows = [f"u{i},{i*0.1},{1 + i*0.217},{5 + i*0.391},{i % 2}" for i in range(20)]
        path = write_csv(tmp_path, rows)
        assert load_panel(path, SCHEMA).equals(load_panel(path, SCHEMA))

    def test_heavy_ties_warn(self, tmp_path):
        rows = [f"u{i},{i*1.0},7.0,7.0,{i % 2}" for i in range(10)]
        path = write_csv(tmp_path, rows)
        with pytest.warns(HeavyTies):
            load_panel(path, SCHEMA)

    def test_covariates_and_pre_periods(self, tmp_path):
        schema = ColumnMap(
            id="uid",
            y_t="y2011",
            y_tm1="y2007",
            y_tm2="y2003",
            treated="disp",
            covariates=("edu",),
            pre_periods=("y1999",),
        )
        path = write_csv(
            tmp_path,
            ["a,1.0,2.0,3.0,1,12,4.0", "b,1.5,2.5,3.5,0,16,4.5", "c,0.5,1.7,2.9,0,10,5.0"],
            header="uid,y2011,y2007,y2003,disp,edu,y1999",
        )
        data = load_panel(path, schema)
        assert data.covariate_names == ("edu",)
        assert data.x.shape == (3, 1)
        assert data.n_pre_periods == 3
        pre = data.pre_outcome_matrix()
        assert pre.shape == (3, 3)
        # columns ordered oldest first
        assert pre[0, 0] == 4.0 and pre[0, 1] == 3.0 and pre[0, 2] == 2.0


class TestSplit:
    def make(self):
        rng = np.random.default_rng(0)
        return from_arrays(
            y_t=rng.normal(size=10),
            y_tm1=rng.normal(size=10),
            y_tm2=rng.normal(size=10),
            treated=np.array([1, 0, 1, 0, 0, 1, 0, 0, 1, 0]),
        )

    def test_partition(self):
        data = self.make()
        treated, control = split_by_group(data)
        assert treated.n == 4 and control.n == 6
        assert treated.n + control.n == data.n
        combined = sorted(list(treated.ids) + list(control.ids))
        assert combined == sorted(data.ids)

    def test_order_preserved(self):
        data = self.make()
        treated, _ = split_by_group(data)
        assert list(treated.ids) == [0, 2, 5, 8]

    def test_empty_side_flagged(self):
        data = self.make()
        all_control = data.subset(np.flatnonzero(data.treated == 0))
        with pytest.warns(EmptyGroup):
            treated, control = split_by_group(all_control)
        assert treated.n == 0 and control.n == 6

    def test_unit_records(self):
        data = self.make()
        u = data.units[0]
        assert u.treated == 1
        assert u.y_t == data.y_t[0]
