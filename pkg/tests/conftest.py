import base64
import json
from pathlib import Path

import pytest

DATA_DIR = Path(__file__).parent / "data"

# 1x1 red pixel
PNG_B64 = (
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR4nGP4z8DwHwAFAAH/"
    "q842iQAAAABJRU5ErkJggg=="
)
PNG_BYTES = base64.b64decode(PNG_B64)


def write_llm_fixture(path: Path, responses: list[str], digests=None) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for i, r in enumerate(responses):
            digest = digests[i] if digests else None
            fh.write(json.dumps({"digest": digest, "response": r}) + "\n")
    return path


def write_stub_fixture(path: Path, entries: list[dict]) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e) + "\n")
    return path


MEDIA_CSV = (
    "title,type\n"
    "Alpha,Movie\n"
    "Beta,Movie\n"
    "Gamma,TV Show\n"
    "Delta,Movie\n"
    "Epsilon,TV Show\n"
    "Zeta,Movie\n"
)

BOOTSTRAP_PREVIEW = (
    "RangeIndex: 6 entries, 0 to 5\n"
    "title    object\n"
    "type     object\n"
    "     title     type\n"
    "0    Alpha    Movie\n"
    "1     Beta    Movie\n"
    "2    Gamma  TV Show\n"
    "3    Delta    Movie\n"
    "4  Epsilon  TV Show\n"
)

# LLM replies for the scripted media-catalog flow, in call order:
# coder(bootstrap), planner, coder(count), planner, coder(pie), planner,
# grapher, planner(final).
E2E_FINAL_ANSWER = "Movies dominate the catalog with about 67% versus 33% TV shows."
E2E_LLM_RESPONSES = [
    "```python\nimport pandas as pd\ndf = pd.read_csv('media.csv')\n"
    "df.info()\nprint(df.head())\n```",
    "CODER: Count the number of TV shows and movies",
    "```python\nprint(df['type'].value_counts().to_string())\n```",
    "CODER: Create a pie chart of the type proportions and save it as artifacts/pie_1.png",
    "```python\nimport matplotlib\nmatplotlib.use('Agg')\n"
    "import matplotlib.pyplot as plt\n"
    "counts = df['type'].value_counts()\n"
    "plt.pie(counts, labels=counts.index)\nplt.savefig('artifacts/pie_1.png')\n```",
    "GRAPHER: Report the proportions shown [fig:pie_1]",
    "Q: What proportions are shown?\nA: Movies are about 67% and TV shows about 33%.",
    f"FINAL: {E2E_FINAL_ANSWER} </done>",
]

E2E_STUB_RESULTS = [
    {"status": "Ok", "stdout": BOOTSTRAP_PREVIEW},
    {"status": "Ok", "stdout": "Movie      4\nTV Show    2\n"},
    {
        "status": "Ok",
        "stdout": "",
        "artifacts": [{"name": "pie_1.png", "mime": "image/png", "bytes_b64": PNG_B64}],
    },
]


@pytest.fixture
def media_csv(tmp_path):
    p = tmp_path / "media.csv"
    p.write_text(MEDIA_CSV)
    return p


@pytest.fixture
def e2e_fixtures(tmp_path, media_csv):
    """(csv, llm fixture, stub fixture) for the scripted end-to-end flow."""
    llm = write_llm_fixture(tmp_path / "llm.ndjson", E2E_LLM_RESPONSES)
    stub = write_stub_fixture(tmp_path / "stub.ndjson", E2E_STUB_RESULTS)
    return media_csv, llm, stub


def make_stub_executor(fixture_path, workdir_root):
    from insightloop.executor import ExecutorConfig, StubExecutor

    return StubExecutor(
        ExecutorConfig(stub_fixture=str(fixture_path), workdir_root=str(workdir_root))
    )
