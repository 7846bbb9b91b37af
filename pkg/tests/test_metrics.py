"""Tests for the in-process counters and their Prometheus rendering."""

from vhs2hd import metrics


class TestCounters:
    """Tests for counter updates and reset."""

    def test_steps_by_kind(self):
        start = metrics.record_step_start()
        metrics.record_step_done("style", start)
        metrics.record_step_done("resolution", start)
        metrics.record_step_done("resolution", start)
        assert metrics.steps_total("style") == 1
        assert metrics.steps_total("resolution") == 2
        assert "vhs2hd_step_duration_seconds_count 3" in metrics.render_prometheus()

    def test_log_guard_ignores_zero(self):
        metrics.record_log_guard(0)
        metrics.record_log_guard(3)
        assert metrics.log_guard_clamps() == 3

    def test_reset(self):
        metrics.record_step_abort("style")
        metrics.record_frames_written(5)
        metrics.reset()
        assert metrics.step_aborts("style") == 0
        assert "vhs2hd_frames_written_total 0" in metrics.render_prometheus()


class TestRender:
    """Tests for the text exposition."""

    def test_both_kinds_always_listed(self):
        text = metrics.render_prometheus()
        assert 'vhs2hd_steps_total{kind="style"} 0' in text
        assert 'vhs2hd_steps_total{kind="resolution"} 0' in text
        assert 'vhs2hd_iqa_images_total{status="error"} 0' in text

    def test_textfile(self, tmp_path):
        metrics.record_iqa_image(ok=True)
        path = tmp_path / "metrics.prom"
        metrics.write_textfile(path)
        assert 'vhs2hd_iqa_images_total{status="ok"} 1' in path.read_text(encoding="utf-8")
        assert not (tmp_path / "metrics.prom.tmp").exists()
