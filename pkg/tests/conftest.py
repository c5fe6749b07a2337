"""Shared fixtures: a small annual-report corpus and scripted LLM scenarios.

The anchor scenario is a coverage-ratio question whose interest-expense
page shares no vocabulary with the round-1 query, so the first retrieval
round provably misses it and the evaluator's feedback is what makes the
second round find it.
"""

from __future__ import annotations

import json

import pytest

from finreportqa.corpus import QAInstance, parse_report
from finreportqa.llm import LLMClient, ProviderConfig, ScriptedBackend

DSCR_QUESTION = "What is the Debt Service Coverage Ratio (DSCR) of the company in 2002?"

DSCR_REPORT_MD = """\
<!-- page: 10 -->
Quarterly revenue summary and business overview of the company.
| Revenue | 900 |
| Gross margin | 300 |
<!-- page: 11 -->
Management discussion of company performance and outlook covering the year.
<!-- page: 31 -->
Finance costs breakdown.
| Interest and other expense, net | 11 |
<!-- page: 34 -->
Long-term debt note. Principal repayments due: 0 for the year.
<!-- page: 50 -->
Income statement highlights for the company.
| EBITDA | 17 |
Debt service coverage inputs appear here.
<!-- page: 51 -->
Cash flow statement. Depreciation plus amortization reconciliation items.
"""

ROUND1_FORMULA = "EBITDA / (Financing Charges + Principal Repayments)"
ROUND2_FORMULA = "EBITDA / (Interest Expense + Principal Repayments)"

SOLVER_ROUND1_REPLY = "Insufficient data: cannot locate the interest expense line. {{0}}"
SOLVER_ROUND2_REPLY = (
    "EBITDA = 17 (page_number: 50). Interest expense = 11 (page_number: 31). "
    "Principal repayments = 0 (page_number: 34). DSCR = 17 / (11 + 0) = {{1.55}}"
)
EVALUATOR_MISSING_REPLY = "interest expense: interest and other expense"

# Ordered matchers: more specific round-2 prompts first, then the per-role
# fallbacks keyed on each agent's system prompt.
DSCR_SCRIPT = [
    ("Missing components to cover", ROUND2_FORMULA),
    ("financial text understanding", ROUND1_FORMULA),
    ("Interest and other expense", SOLVER_ROUND2_REPLY),
    ("annual report in Markdown form", SOLVER_ROUND1_REPLY),
    ("{{1.55}}", "NONE"),
    ("inspects a generated answer", EVALUATOR_MISSING_REPLY),
]

ALWAYS_MISSING_SCRIPT = [
    ("financial text understanding", "Alpha / Beta"),
    ("annual report in Markdown form", "cannot tell {{0}}"),
    ("inspects a generated answer", "net income, total assets"),
]


def make_scripted_client(entries, **config_overrides) -> LLMClient:
    config = ProviderConfig(model="scripted", **config_overrides)
    return LLMClient(config, ScriptedBackend(entries))


def dscr_instance(**overrides) -> QAInstance:
    base = dict(
        id="q-dscr-1",
        company="DemoCo",
        fiscal_year=2002,
        question=DSCR_QUESTION,
        gold_answer="1.55",
        question_type="mixed",
        evidence_pages=frozenset({31, 50}),
        program_source="17/(11+0)",
        reasoning_trace="Thought: combine the coverage inputs across pages.",
        n_evidence_tables=2,
    )
    base.update(overrides)
    return QAInstance(**base)


@pytest.fixture
def dscr_report():
    return parse_report(DSCR_REPORT_MD, report_id="DemoCo_2002", company="DemoCo",
                        fiscal_year=2002)


@pytest.fixture
def dscr_client():
    return make_scripted_client(DSCR_SCRIPT)


def write_dscr_workspace(tmp_path):
    """Corpus dir, dataset, and script file for CLI-level runs."""
    corpus_dir = tmp_path / "corpus"
    corpus_dir.mkdir(exist_ok=True)
    (corpus_dir / "DemoCo_2002.md").write_text(DSCR_REPORT_MD, encoding="utf-8")

    dataset = tmp_path / "dataset.jsonl"
    record = {
        "id": "q-dscr-1",
        "company": "DemoCo",
        "year": 2002,
        "question": DSCR_QUESTION,
        "type": "mixed",
        "thoughts": "Thought: combine the coverage inputs across pages.",
        "page_numbers": [31, 50],
        "python_code": "17/(11+0)",
        "answer": "1.55",
        "n_evidence_tables": 2,
    }
    dataset.write_text(json.dumps(record) + "\n", encoding="utf-8")

    script = tmp_path / "script.json"
    script.write_text(json.dumps({
        "mode": "repeatable",
        "entries": [{"matcher": m, "response": r} for m, r in DSCR_SCRIPT],
    }), encoding="utf-8")
    return corpus_dir, dataset, script
