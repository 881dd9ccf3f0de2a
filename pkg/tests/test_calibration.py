import io
import warnings

import pytest

from offpath.calibration import (
    covered_links, evaluate_fixture, fit_efficiency, link_groups, load_fixtures, validate_against_fixtures,
)
from offpath.errors import MissingColumn, ParseError, Underdetermined, ValidationError
from offpath.hw import LINKS, load_profile

HEADER = "id,source,path,verb,payload,mix,value,unit,tol\n"


def table(*rows):
    return load_fixtures(io.StringIO(HEADER + "".join(r + "\n" for r in rows)))


BIDIR = "bidir,obs:1,client_host,read,4096,alloc:client_host/write,364,Gbps,0.02"
SAME = "same,obs:2,client_host,read,4096,alloc:client_host/read,190,Gbps,0.02"


def fit_quietly(cfg, fixtures):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", Underdetermined)
        return fit_efficiency(cfg, fixtures)


def test_bundled_fixtures_load():
    fixtures = load_fixtures(None)
    assert len(fixtures) >= 30
    assert len({f.id for f in fixtures}) == len(fixtures)
    assert all(f.source for f in fixtures)


def test_missing_column():
    with pytest.raises(MissingColumn):
        load_fixtures(io.StringIO("id,source,path\nx,y,z\n"))


def test_bad_number_reports_line():
    with pytest.raises(ParseError) as exc:
        table("x,obs,client_host,read,4096,alloc,lots,Gbps,0.02")
    assert exc.value.lineno == 2


@pytest.mark.parametrize("row", [
    "x,obs,client_host,read,4096,alloc,1,Gbps,0",
    "x,,client_host,read,4096,alloc,1,Gbps,0.02",
])
def test_invalid_rows(row):
    with pytest.raises(ValidationError):
        table(row)


def test_duplicate_ids():
    with pytest.raises(ValidationError, match="duplicate"):
        table(BIDIR, BIDIR)


def test_comments_and_blank_lines_skipped():
    fixtures = load_fixtures(io.StringIO("# note\n" + HEADER + "\n" + BIDIR + "\n"))
    assert [f.id for f in fixtures] == ["bidir"]


def test_fit_bidirectional_example(cfg):
    fitted = fit_quietly(cfg, table(BIDIR))
    assert fitted["net:nic->wire"] == pytest.approx(0.91, abs=1e-6)
    assert fitted["net:wire->nic"] == pytest.approx(0.91, abs=1e-6)
    assert fitted["pcie0:host->switch"] == 1.0


def test_fit_same_direction_example(cfg):
    fitted = fit_quietly(cfg, table(SAME))
    assert fitted["net:nic->wire"] == pytest.approx(0.95, abs=1e-6)
    assert fitted["net:wire->nic"] == 1.0


def test_links_sharing_a_signature_are_grouped(cfg):
    groups = link_groups(cfg.theoretical(), table(BIDIR))
    assert {"net:nic->wire", "net:wire->nic"} in [set(g) for g in groups]


def test_no_fixtures_keeps_unity(cfg):
    with pytest.warns(Underdetermined):
        fitted = fit_efficiency(cfg, [])
    assert fitted == {link: 1.0 for link in LINKS}


def test_uncovered_links_warn(cfg):
    with pytest.warns(Underdetermined, match="pcie0:switch->host"):
        fit_efficiency(cfg, load_fixtures(None))


def test_fit_is_idempotent(cfg):
    fixtures = load_fixtures(None)
    once = fit_quietly(cfg, fixtures)
    twice = fit_quietly(cfg.with_efficiency(once), fixtures)
    for link in LINKS:
        assert twice[link] == pytest.approx(once[link], abs=1e-9)


def test_fit_ignores_starting_efficiency(cfg):
    fixtures = table(SAME)
    skewed = cfg.with_efficiency({link: 0.5 for link in LINKS})
    assert fit_quietly(skewed, fixtures) == pytest.approx(fit_quietly(cfg, fixtures))


def test_all_bundled_fixtures_pass_with_fitted_profile():
    report = validate_against_fixtures(load_profile("fitted"), None, load_fixtures(None))
    assert report.passed, report.table()


def test_fresh_fit_reproduces_packaged_profile(cfg):
    fixtures = load_fixtures(None)
    fitted = fit_quietly(cfg, fixtures)
    packaged = load_profile("fitted")
    for link in LINKS:
        assert packaged.link_efficiency(link) == pytest.approx(fitted[link], abs=1e-6)


def test_validation_report_flags_failures(cfg):
    report = validate_against_fixtures(cfg, None, table(BIDIR))
    assert not report.passed
    assert report.failures[0].id == "bidir"
    assert "FAIL" in report.table()


def test_covered_links(cfg):
    assert set(covered_links(cfg.theoretical(), table(SAME))) == {"net:nic->wire"}


def test_evaluate_extra_flow_with_demand(cfg):
    (f,) = table("h,obs,client_host,read,65536,alloc_theory:client_host/write+hostsoc_rdma.s2h/read@56,456,Gbps,0.02")
    assert evaluate_fixture(cfg, f) == pytest.approx(456)
