import json

import pytest

from fracpile.campaign import Campaign, CampaignError, default_campaign, quick_campaign, run_campaign
from fracpile.cli import main


def test_default_campaign_has_surface_data_steps():
    camp = default_campaign()
    names = [s.name for s in camp.steps]
    for a in ("0.5", "1.0", "1.5", "2.0"):
        assert f"surface-d2-n60-a{a}" in names
    assert len(set(names)) == len(names)


def test_campaign_roundtrip():
    camp = quick_campaign(3)
    assert Campaign.from_dict(camp.to_dict()) == camp


def test_campaign_rejects_unknown_keys():
    with pytest.raises(ValueError):
        Campaign.from_dict({"steps": [], "seed": 1})
    with pytest.raises(ValueError):
        Campaign.from_dict({"steps": [{"name": "a", "argv": [], "expected": 0}]})


def test_small_campaign_summary(tmp_path):
    camp = Campaign.from_dict(
        {
            "master_seed": 2,
            "steps": [
                {"name": "k", "argv": ["kernel", "--dim", "1", "--n", "2", "--alpha", "1", "--check"]},
                {"name": "s", "argv": ["odometer", "--dim", "1", "--n", "6", "--alpha", "1", "--method", "both"]},
                {
                    "name": "fail",
                    "argv": ["stabilize", "--dim", "1", "--n", "16", "--alpha", "1", "--max-steps", "2", "--check"],
                    "expect_exit": 3,
                },
            ],
        }
    )
    summary = run_campaign(camp, tmp_path)
    assert summary.ok
    text = (tmp_path / "summary.csv").read_text().splitlines()
    assert text[1] == "step,subcommand,gate,result,measured,expected_exit,exit_code"
    assert any(line.startswith("fail,stabilize,converged,fail") for line in text)
    man = json.loads((tmp_path / "s.csv.manifest.json").read_text())
    assert man["config"]["seed"] == 2


def test_hard_failure_aborts(tmp_path):
    camp = Campaign.from_dict({"steps": [{"name": "bad", "argv": ["kernel", "--dim", "1", "--alpha", "1"]}]})
    with pytest.raises(CampaignError, match="bad"):
        run_campaign(camp, tmp_path)


def test_campaign_script_file(tmp_path):
    script = tmp_path / "campaign.json"
    script.write_text(json.dumps({"master_seed": 1, "steps": [{"name": "k", "argv": ["kernel", "--dim", "1", "--n", "4", "--alpha", "1", "--check"]}]}))
    assert main(["campaign", str(script), "--out-dir", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "summary.csv").exists()


@pytest.mark.parametrize("name,factory", [("default", default_campaign), ("quick", quick_campaign)])
def test_shipped_scripts_match_builtin(name, factory):
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "campaigns" / f"{name}.json"
    assert Campaign.load(path) == factory()
