import json
import logging
from pathlib import Path
from typing import List, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd
import seaborn as sns
from jinja2 import Template
from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import ReportException, describe_validation_error
from app.models.evaluation import AblationTable, EvalReport, ExperimentKind

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class ReportService:
    """평가 리포트 출력 서비스 (JSON / CSV / PNG / HTML)"""

    def __init__(self):
        self.html_template = self._get_html_template()

    def emit_report(self, report: EvalReport, out_dir: PathLike) -> List[Path]:
        """파일 이름은 실험 종류와 맵 이름으로만 결정된다"""
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            written = [self.save_json(report, out_dir / "report.json")]
            for table in report.tables:
                if table.rows:
                    written.extend(self._write_tables(table, out_dir))
            written.extend(self._write_plots(report, out_dir))
            written.append(self.save_html(report, out_dir / "report.html"))
        except ReportException:
            raise
        except Exception as e:
            logger.error(f"리포트 출력 실패: {e}")
            raise ReportException(f"리포트를 출력할 수 없습니다: {out_dir}: {str(e)}")

        logger.info(f"리포트 출력 완료: {out_dir} (파일 {len(written)}개)")
        return written

    def save_json(self, report: EvalReport, path: Path) -> Path:
        text = json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True, ensure_ascii=False)
        path.write_text(text + "\n", encoding="utf-8")
        return path

    def load_report(self, path: PathLike) -> EvalReport:
        try:
            return EvalReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ReportException(f"리포트를 읽을 수 없습니다: {path}: {e}")
        except ValidationError as e:
            raise ReportException(f"리포트 형식 오류 ({path}): {describe_validation_error(e)}")

    def _write_tables(self, table: AblationTable, out_dir: Path) -> List[Path]:
        name = table.experiment.value
        rows = pd.DataFrame([
            {
                "level": row.level,
                "seed": row.seed,
                "map_id": row.map_id,
                "accuracy": row.accuracy,
                "n_test": row.n_test,
                "tp": row.confusion.tp,
                "tn": row.confusion.tn,
                "fp": row.confusion.fp,
                "fn": row.confusion.fn,
            }
            for row in table.rows
        ])
        summary = pd.DataFrame([
            {
                "level": item.level,
                "mean_accuracy": item.mean_accuracy,
                "min_accuracy": item.min_accuracy,
                "max_accuracy": item.max_accuracy,
                "spread": item.spread,
            }
            for item in table.summaries
        ])
        rows_path = out_dir / f"{name}_rows.csv"
        summary_path = out_dir / f"{name}_summary.csv"
        rows.to_csv(rows_path, index=False, float_format="%.6f", lineterminator="\n")
        summary.to_csv(summary_path, index=False, float_format="%.6f", lineterminator="\n")
        return [rows_path, summary_path]

    def _write_plots(self, report: EvalReport, out_dir: Path) -> List[Path]:
        written = []
        sns.set_theme(style="whitegrid")

        if report.per_map_accuracy:
            fig, ax = plt.subplots(figsize=(6, 4))
            maps = list(report.per_map_accuracy)
            sns.barplot(x=maps, y=[report.per_map_accuracy[m] for m in maps], ax=ax, color="#667eea")
            ax.set_ylim(0, 1)
            ax.set_xlabel("map")
            ax.set_ylabel("accuracy")
            ax.set_title(f"{report.experiment.value}: accuracy by map")
            written.append(self._save(fig, out_dir / "accuracy_by_map.png"))

        for map_id, matrix in report.confusion.items():
            fig, ax = plt.subplots(figsize=(4, 3.5))
            sns.heatmap(
                matrix.as_grid(),
                annot=True,
                fmt="d",
                cmap="Blues",
                cbar=False,
                xticklabels=["healthy", "abnormal"],
                yticklabels=["healthy", "abnormal"],
                ax=ax,
            )
            ax.set_xlabel("predicted")
            ax.set_ylabel("actual")
            ax.set_title(f"confusion: {map_id}")
            written.append(self._save(fig, out_dir / f"confusion_{map_id}.png"))

        for table in report.tables:
            if not table.summaries:
                continue
            levels = [item.level for item in table.summaries]
            means = [item.mean_accuracy for item in table.summaries]
            fig, ax = plt.subplots(figsize=(6, 4))
            if table.experiment is ExperimentKind.DATASIZE:
                fractions = [float(level) * 100 for level in levels]
                ax.plot(fractions, means, marker="o", color="#764ba2")
                ax.fill_between(
                    fractions,
                    [item.min_accuracy for item in table.summaries],
                    [item.max_accuracy for item in table.summaries],
                    alpha=0.2,
                    color="#764ba2",
                )
                ax.set_xlabel("training data (%)")
                filename = "datasize_curve.png"
            else:
                sns.barplot(x=levels, y=means, ax=ax, color="#764ba2")
                ax.set_xlabel(table.experiment.value)
                filename = f"{table.experiment.value}_levels.png"
            ax.set_ylim(0, 1)
            ax.set_ylabel("mean accuracy")
            written.append(self._save(fig, out_dir / filename))
        return written

    @staticmethod
    def _save(fig, path: Path) -> Path:
        fig.tight_layout()
        fig.savefig(path, dpi=settings.plot_dpi, metadata={"Software": None})
        plt.close(fig)
        return path

    def save_html(self, report: EvalReport, path: Path) -> Path:
        html = Template(self.html_template).render(
            app_name=settings.app_name,
            report=report,
            experiment=report.experiment.value,
            confusion_images=[f"confusion_{map_id}.png" for map_id in report.confusion],
        )
        path.write_text(html, encoding="utf-8")
        return path

    def _get_html_template(self) -> str:
        """리포트 HTML 템플릿"""
        return """
        <!DOCTYPE html>
        <html>
        <head>
            <meta charset="utf-8">
            <title>{{ app_name }} - {{ experiment }}</title>
            <style>
                body {
                    font-family: 'Apple SD Gothic Neo', sans-serif;
                    padding: 20px;
                    max-width: 1000px;
                    margin: 0 auto;
                    line-height: 1.6;
                }
                .header {
                    background: linear-gradient(135deg, #667eea 0%, #764ba2 100%);
                    color: white;
                    padding: 30px;
                    border-radius: 10px;
                    margin-bottom: 30px;
                    text-align: center;
                }
                .card {
                    background-color: #f8f9fa;
                    padding: 25px;
                    margin: 20px 0;
                    border-radius: 15px;
                    box-shadow: 0 4px 6px rgba(0,0,0,0.1);
                }
                table { border-collapse: collapse; width: 100%; }
                th, td { border-bottom: 1px solid #dee2e6; padding: 6px 10px; text-align: right; }
                th:first-child, td:first-child { text-align: left; }
                img { max-width: 48%; margin: 4px; }
            </style>
        </head>
        <body>
            <div class="header">
                <h1>{{ app_name }}</h1>
                <p>실험: {{ experiment }} · 시드 {{ report.seeds | join(", ") }}</p>
            </div>

            {% if report.per_map_accuracy %}
            <div class="card">
                <h2>맵별 정확도</h2>
                <table>
                    <tr><th>맵</th><th>정확도</th><th>TP</th><th>TN</th><th>FP</th><th>FN</th></tr>
                    {% for map_id, acc in report.per_map_accuracy.items() %}
                    {% set cm = report.confusion[map_id] %}
                    <tr>
                        <td>{{ map_id }}</td><td>{{ "%.4f" | format(acc) }}</td>
                        <td>{{ cm.tp }}</td><td>{{ cm.tn }}</td><td>{{ cm.fp }}</td><td>{{ cm.fn }}</td>
                    </tr>
                    {% endfor %}
                </table>
                <p>평균 정확도: <strong>{{ "%.4f" | format(report.average_accuracy) }}</strong>
                   · 맵 간 범위: {{ "%.4f" | format(report.map_spread) }}</p>
                <img src="accuracy_by_map.png" alt="accuracy by map">
                {% for image in confusion_images %}<img src="{{ image }}" alt="{{ image }}">{% endfor %}
            </div>
            {% endif %}

            {% for table in report.tables %}
            <div class="card">
                <h2>{{ table.experiment.value }} 어블레이션</h2>
                <table>
                    <tr><th>수준</th><th>평균</th><th>최소</th><th>최대</th><th>범위</th></tr>
                    {% for item in table.summaries %}
                    <tr>
                        <td>{{ item.level }}</td>
                        <td>{{ "%.4f" | format(item.mean_accuracy) }}</td>
                        <td>{{ "%.4f" | format(item.min_accuracy) }}</td>
                        <td>{{ "%.4f" | format(item.max_accuracy) }}</td>
                        <td>{{ "%.4f" | format(item.spread) }}</td>
                    </tr>
                    {% endfor %}
                </table>
            </div>
            {% endfor %}

            <div class="card">
                <h2>설정 요약</h2>
                <table>
                    {% for key, digest in report.config_digests.items() %}
                    <tr><td>{{ key }}</td><td><code>{{ digest }}</code></td></tr>
                    {% endfor %}
                </table>
            </div>
        </body>
        </html>
        """
