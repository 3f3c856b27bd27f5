"""Shared fixtures: the worked refactor scenario, synthetic corpora, toy repos."""

from __future__ import annotations

import subprocess
from dataclasses import dataclass
from pathlib import Path

import pytest

from assocedit.edits import Edit, EditProvenance, Example, LineSpan, Version

V1_LINES = (
    "using System.Collections.Generic;",
    "using System.Linq.Expressions;",
    "",
    "public class ProjectionIndexBinder",
    "{",
    "    public int Bind(IReadOnlyList<Expression> arguments, ProjectionDescriptor descriptor)",
    "    {",
    "        var originalIndex = (int)((ConstantExpression)arguments[1]).Value;",
    "        var indexOffset = descriptor != null ? descriptor.Offset : 0;",
    "        var boundSource = arguments[0];",
    "",
    "        var property = (IProperty)((ConstantExpression)arguments[2]).Value;",
    "        var projectionIndex = originalIndex + indexOffset;",
    "        return projectionIndex;",
    "    }",
    "}",
)

AFTER_12 = (
    "        var property = (IProperty)((ConstantExpression)arguments[2]).Value;",
    "        var propertyProjectionMap = descriptor != null ? (IDictionary<IProperty, int>)descriptor.ProjectionMap : null;",
    "        var boundSource = Visit(arguments[0]);",
)

GROUND_TRUTH_LINE = "        var projectionIndex = propertyProjectionMap[property];"

# the incorrect completion observed for this scenario without edit context
WRONG_PREDICTION_LINE = (
    "var projectionIndex = (int)( (ConstantExpression)methodCallExpression.Arguments[1] ).Value;"
)


@dataclass(frozen=True)
class RefactorScenario:
    v1: Version
    v2: Version
    v3: Version
    edit_12: Edit
    edit_23: Edit
    example: Example


@pytest.fixture(scope="session")
def scenario() -> RefactorScenario:
    """Two-step refactor: a three-line rewrite followed by a dependent edit
    (delete the duplicated line, rewrite the next one as a dictionary lookup
    whose expression appears nowhere in the prior code)."""
    v1 = Version(V1_LINES)
    v2_lines = V1_LINES[:7] + AFTER_12 + V1_LINES[10:]
    v2 = Version(v2_lines)
    edit_12 = Edit(
        prefix=V1_LINES[0:7],
        before=V1_LINES[7:10],
        after=AFTER_12,
        suffix=V1_LINES[10:16],
        span=LineSpan(7, 10),
        provenance=EditProvenance(
            repo_id="demo", file_path="ProjectionIndexBinder.cs", revision_id="r1", order_index=0
        ),
    )
    edit_23 = Edit(
        prefix=v2_lines[1:11],
        before=v2_lines[11:13],
        after=(GROUND_TRUTH_LINE,),
        suffix=v2_lines[13:16],
        span=LineSpan(11, 13),
        provenance=EditProvenance(
            repo_id="demo", file_path="ProjectionIndexBinder.cs", revision_id="r2", order_index=1
        ),
    )
    v3 = Version(v2_lines[:11] + (GROUND_TRUTH_LINE,) + v2_lines[13:])
    example = Example(id="refactor-0001", current=edit_23, ctx_edits=(edit_12,))
    return RefactorScenario(v1=v1, v2=v2, v3=v3, edit_12=edit_12, edit_23=edit_23, example=example)


def make_edit(
    before: list[str],
    after: list[str],
    start: int = 0,
    *,
    prefix: list[str] | None = None,
    suffix: list[str] | None = None,
    repo: str = "repo",
    path: str = "file.cs",
    revision: str | None = "rev",
    order: int = 0,
) -> Edit:
    return Edit(
        prefix=tuple(prefix or ()),
        before=tuple(before),
        after=tuple(after),
        suffix=tuple(suffix or ()),
        span=LineSpan(start, start + len(before)),
        provenance=EditProvenance(
            repo_id=repo, file_path=path, revision_id=revision, order_index=order
        ),
    )


def replicate_corpus(n: int = 200) -> list[Example]:
    """Examples whose target edit replicates one associated edit line-for-line.

    Identifiers are namespaced per example, so a noise edit drawn from any
    other example can never collide with a target's before-lines.
    """
    examples = []
    for i in range(n):
        old = f"        var handler{i} = legacyRegistry{i}.Resolve();"
        new = f"        var handler{i} = modernRegistry{i}.Resolve();"
        filler = [f"        var slot{i}x{j} = {j};" for j in range(8)]
        ctx = make_edit(
            [old],
            [new],
            start=2,
            prefix=filler[0:2],
            suffix=filler[2:4],
            repo=f"repo{i % 7}",
            path=f"src/File{i}.cs",
            revision=f"rev{i}",
            order=0,
        )
        target = make_edit(
            [old],
            [new],
            start=8,
            prefix=filler[4:6],
            suffix=filler[6:8],
            repo=f"repo{i % 7}",
            path=f"src/File{i}.cs",
            revision=f"rev{i}",
            order=1,
        )
        examples.append(Example(id=f"replicate-{i:04d}", current=target, ctx_edits=(ctx,)))
    return examples


TOY_FILE_V1 = """using System;

public class Calculator
{
    public int Add(int a, int b)
    {
        return a + b;
    }

    public int Sub(int a, int b)
    {
        return a - b;
    }
}
"""

TOY_FILE_V2 = TOY_FILE_V1.replace("return a + b;", "return checked(a + b);").replace(
    "return a - b;", "return checked(a - b);"
)

TOY_FILE_V3 = TOY_FILE_V2.replace("public int Sub(", "public int Subtract(")


def _git(repo: Path, *args: str, env: dict[str, str] | None = None) -> None:
    base_env = {
        "GIT_AUTHOR_NAME": "dev",
        "GIT_AUTHOR_EMAIL": "dev@example.com",
        "GIT_COMMITTER_NAME": "dev",
        "GIT_COMMITTER_EMAIL": "dev@example.com",
        "HOME": str(repo),
        "PATH": "/usr/bin:/bin:/usr/local/bin",
    }
    if env:
        base_env.update(env)
    subprocess.run(["git", "-C", str(repo), *args], check=True, capture_output=True, env=base_env)


def make_toy_repo(root: Path, with_binary: bool = False) -> Path:
    """Three commits over one C# file (add, two nearby edits, a rename)."""
    repo = root / "toyrepo"
    repo.mkdir()
    _git(repo, "init", "-q")
    source = repo / "Calculator.cs"
    stamps = ("2021-01-01T00:00:00 +0000", "2021-01-02T00:00:00 +0000", "2021-01-03T00:00:00 +0000")
    for i, content in enumerate((TOY_FILE_V1, TOY_FILE_V2, TOY_FILE_V3)):
        source.write_text(content, encoding="utf-8")
        if with_binary:
            (repo / "blob.bin").write_bytes(b"\x00\x01binary" + bytes([i]))
        _git(repo, "add", "-A")
        _git(
            repo,
            "commit",
            "-q",
            "-m",
            f"step {i + 1}",
            env={"GIT_AUTHOR_DATE": stamps[i], "GIT_COMMITTER_DATE": stamps[i]},
        )
    return repo


@pytest.fixture
def toy_repo(tmp_path: Path) -> Path:
    return make_toy_repo(tmp_path)
