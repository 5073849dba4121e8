"""
Report builder: plain-text comparison tables and line-delimited records for plotting
"""

import json
import logging
import math
import os
from pathlib import Path
from typing import Dict, Iterable, List, Union

import numpy as np

from .evaluation import ContingencyTable
from .model import save_model
from .pipeline import EvalReport, MethodResult

logger = logging.getLogger(__name__)

REPORT_FILE = "report.txt"
RECORDS_FILE = "records.jsonl"
MODEL_FILE = "snapshot_model.txt"
DECIMALS = 12

METHOD_LABELS = {
    "snapshot": "Snapshot features",
    "global": "Global DTW",
    "prefix": "Prefix matching",
    "suffix": "Suffix matching",
    "subsequence": "Subsequence matching",
}


def _num(value: float) -> float:
    """Round for stable machine-readable output"""
    value = float(value)
    return value if math.isnan(value) or math.isinf(value) else round(value, DECIMALS)


class ReportBuilder:
    """Formats an EvalReport for people and for downstream plotting"""

    def get_method_label(self, method: str) -> str:
        return METHOD_LABELS.get(method, method)

    def create_header(self, report: EvalReport) -> List[str]:
        lines = ["PATIENT SIMILARITY EVALUATION", "=" * 29, ""]
        lines.append(f"Cohort fingerprint: {report.fingerprint[:16]}")
        for key, value in report.config.describe().items():
            lines.append(f"  {key}: {value}")
        return lines

    def create_summary_section(self, summary: Dict) -> List[str]:
        histogram = ", ".join(f"{k}:{v}" for k, v in summary["visit_histogram"].items())
        return [
            "",
            "Cohort",
            "------",
            f"Patients: {summary['patients']}  Visits: {summary['visits']}  Median visits: {summary['median_visits']:g}",
            f"Visit histogram: {histogram or '-'}",
            f"Patients with 4+ visits: {summary['share_4plus_visits']:.1%}",
            f"PET availability per visit: {summary['pet_availability']:.1%}",
            f"Instances: {summary['instances']} ({summary['labeled_instances']} labeled, "
            f"{summary['censored_instances']} censored), prevalence {summary['prevalence']:.1%}",
        ]

    def create_methods_table(self, report: EvalReport) -> List[str]:
        lines = ["", "AUROC (95% CI)", "--------------"]
        width = max(len(self.get_method_label(m)) for m in report.results)
        for method, result in report.results.items():
            label = self.get_method_label(method).ljust(width)
            chosen = ", ".join(f"{c:g}x{n}" for c, n in sorted(result.chosen_C.items()))
            lines.append(f"{label}  {result.auroc:.3f} ({result.ci.lower:.3f} - {result.ci.upper:.3f})  C: {chosen}")
            if result.top_features:
                top = ", ".join(f"{name}={weight:+.3f}" for name, weight in result.top_features[:3])
                lines.append(f"{' ' * width}  top features: {top}")
            if result.top_feature_values:
                lines.append(f"{' ' * width}  {self.create_distribution_line(result)}")
        return lines

    def create_distribution_line(self, result: MethodResult) -> str:
        values = np.asarray(result.top_feature_values)
        name = result.top_features[0][0]
        medians = [np.nanmedian(values[result.labels == label]) for label in (1, 0)]
        return f"final-visit {name} median: {medians[0]:.3f} progressing vs {medians[1]:.3f} stable"

    def create_tests_section(self, report: EvalReport) -> List[str]:
        if not report.tests:
            return []
        lines = ["", "Pairwise DeLong z-tests (two-sided)", "-----------------------------------"]
        for test in report.tests:
            lines.append(f"{test.method_a} vs {test.method_b}: z = {test.z:+.3f}, p = {test.p:.4f}")
        return lines

    def create_contingency_section(self, method_a: str, method_b: str, table: ContingencyTable) -> List[str]:
        lines = [
            "",
            f"Contingency at cutoff 0.5: {method_a} (rows) vs {method_b} (columns)",
            f"                 {method_b} correct   {method_b} wrong",
            f"{method_a} correct  {table.both_correct:>10}   {table.a_only:>10}",
            f"{method_a} wrong    {table.b_only:>10}   {table.both_wrong:>10}",
            f"McNemar p: exact {table.mcnemar_exact_p:.4f}, chi-square {table.mcnemar_chi2_p:.4f}",
        ]
        breakdown = f"Positive instances correct only under {method_a}: {table.positives_a_only}"
        if table.positive_patients_a_only is not None:
            breakdown += f" (from {table.positive_patients_a_only} patients)"
        lines.append(breakdown)
        return lines

    def create_top_section(self, report: EvalReport) -> List[str]:
        if not report.top:
            return []
        method_a, method_b = report.top_pair
        lines = ["", f"Largest probability differences: {method_a} - {method_b}", "-" * 40]
        for rank, item in enumerate(report.top, start=1):
            lines.append(
                f"{rank:>2}. {item.instance_id} label={item.label} "
                f"p_a={item.prob_a:.3f} p_b={item.prob_b:.3f} diff={item.difference:+.3f} "
                f"months={list(item.months)}"
            )
        return lines

    def create_strata_section(self, report: EvalReport) -> List[str]:
        if report.strata is None:
            return []
        method_a, method_b = report.strata_pair
        strata = report.strata
        return [
            "",
            f"Series length: {method_a} vs {method_b}",
            "-" * 30,
            f"{method_a} closer to the truth on {strata.n_a_better} of {strata.n_total} instances; "
            f"{strata.long_fraction_a_better:.1%} of them have {strata.min_length}+ visits "
            f"(overall {strata.long_fraction_overall:.1%})",
        ]

    def create_report_text(self, report: EvalReport) -> str:
        lines = self.create_header(report)
        lines += self.create_summary_section(report.summary)
        lines += self.create_methods_table(report)
        lines += self.create_tests_section(report)
        for method_a, method_b, table in report.contingencies:
            lines += self.create_contingency_section(method_a, method_b, table)
        lines += self.create_top_section(report)
        lines += self.create_strata_section(report)
        return "\n".join(lines) + "\n"

    def create_records(self, report: EvalReport) -> List[Dict]:
        """Machine-readable records; identical across parallelism degrees for a fixed seed"""
        records: List[Dict] = [
            {"type": "config", "fingerprint": report.fingerprint, **report.config.to_record()},
            {"type": "summary", **{k: (_num(v) if isinstance(v, float) else v) for k, v in report.summary.items()}},
        ]
        records[-1]["visit_histogram"] = {str(k): v for k, v in report.summary["visit_histogram"].items()}

        by_id = {instance.instance_id: instance for instance in report.instances}
        for method, result in report.results.items():
            records.append({
                "type": "method",
                "method": method,
                "auroc": _num(result.auroc),
                "ci_lower": _num(result.ci.lower),
                "ci_upper": _num(result.ci.upper),
                "variance": _num(result.ci.variance),
                "chosen_C": {repr(c): n for c, n in sorted(result.chosen_C.items())},
                "top_features": [[name, _num(weight)] for name, weight in result.top_features],
            })
            for instance_id, label, probability in zip(result.instance_ids, result.labels, result.probabilities):
                instance = by_id[instance_id]
                records.append({
                    "type": "prediction",
                    "method": method,
                    "instance_id": instance_id,
                    "patient_id": instance.patient_id,
                    "length": instance.length,
                    "label": int(label),
                    "probability": _num(probability),
                })
            if result.top_feature_values:
                name = result.top_features[0][0]
                for instance_id, label, value in zip(result.instance_ids, result.labels, result.top_feature_values):
                    if math.isnan(value):
                        continue
                    records.append({
                        "type": "snapshot_distribution",
                        "method": method,
                        "feature": name,
                        "instance_id": instance_id,
                        "label": int(label),
                        "value": _num(value),
                    })

        for test in report.tests:
            records.append({"type": "ztest", "method_a": test.method_a, "method_b": test.method_b,
                            "z": _num(test.z), "p": _num(test.p)})

        for method_a, method_b, table in report.contingencies:
            records.append({
                "type": "contingency",
                "method_a": method_a,
                "method_b": method_b,
                "both_correct": table.both_correct,
                "a_only": table.a_only,
                "b_only": table.b_only,
                "both_wrong": table.both_wrong,
                "positives_a_only": table.positives_a_only,
                "positive_patients_a_only": table.positive_patients_a_only,
                "mcnemar_exact_p": _num(table.mcnemar_exact_p),
                "mcnemar_chi2_p": _num(table.mcnemar_chi2_p),
            })

        for rank, item in enumerate(report.top, start=1):
            records.append({
                "type": "top_difference",
                "rank": rank,
                "method_a": report.top_pair[0],
                "method_b": report.top_pair[1],
                "instance_id": item.instance_id,
                "patient_id": item.patient_id,
                "label": item.label,
                "prob_a": _num(item.prob_a),
                "prob_b": _num(item.prob_b),
                "months": list(item.months),
                "trajectories": item.trajectories,
            })

        if report.strata is not None:
            records.append({
                "type": "length_strata",
                "method_a": report.strata_pair[0],
                "method_b": report.strata_pair[1],
                "n_total": report.strata.n_total,
                "n_a_better": report.strata.n_a_better,
                "long_fraction_a_better": _num(report.strata.long_fraction_a_better),
                "long_fraction_overall": _num(report.strata.long_fraction_overall),
                "min_length": report.strata.min_length,
            })
        return records


def record_lines(records: Iterable[Dict]) -> List[str]:
    return [json.dumps(record, sort_keys=True) for record in records]


def write_report(report: EvalReport, out_dir: Union[str, Path]) -> Dict[str, str]:
    """Write report.txt, records.jsonl and the refit snapshot model (when evaluated) into out_dir"""
    builder = ReportBuilder()
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "report": os.path.join(out_dir, REPORT_FILE),
        "records": os.path.join(out_dir, RECORDS_FILE),
    }
    with open(paths["report"], "w", encoding="utf-8", newline="\n") as f:
        f.write(builder.create_report_text(report))
    with open(paths["records"], "w", encoding="utf-8", newline="\n") as f:
        for line in record_lines(builder.create_records(report)):
            f.write(line + "\n")
    snapshot = report.results.get("snapshot")
    if snapshot is not None and snapshot.final_model is not None:
        paths["model"] = os.path.join(out_dir, MODEL_FILE)
        save_model(snapshot.final_model, paths["model"])
    logger.info(f"Wrote {', '.join(paths.values())}")
    return paths
