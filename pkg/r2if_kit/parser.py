from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Union

import regex

from .constants import REASON_CLOSE, REASON_OPEN, REJECTION_STRING, TOOL_CLOSE, TOOL_OPEN
from .domain import ActionList
from .errors import InvalidValue

# Only opening tags start a block. Inside a block every other tag is literal text.
RE_OPEN_TAG = regex.compile(r'<(reason|tool)>')
RE_CALL_HEADER = regex.compile(r'^[ \t]*For[ \t]+#[ \t]*(?P<name>[^#\n]*?)[ \t]*#[ \t]*:[ \t]*$')
RE_PARAM_LINE = regex.compile(r'^[ \t]*-[ \t]*(?P<param>[^:\n]*?)[ \t]*:(?P<rest>.*)$')

CLOSE_TAGS = {'reason': REASON_CLOSE, 'tool': TOOL_CLOSE}


@dataclass(frozen=True)
class RejectionMarker:
    raw_text: str = REJECTION_STRING


@dataclass(frozen=True)
class ParseFailure:
    reason: str
    # Offset inside the tool block of the value that failed to parse (-1 if there is no tool block)
    offset: int = -1
    error_offset: int = -1


ToolPayload = Union[ActionList, RejectionMarker, ParseFailure]


@dataclass(frozen=True)
class ParsedResponse:
    format_valid: bool
    reason_text: str | None
    tool_payload: ToolPayload
    violations: tuple[str, ...] = ()


@dataclass(frozen=True)
class AnswerEntry:
    name: str
    arg_snippets: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class AnswerDoc:
    entries: tuple[AnswerEntry, ...] = ()
    unparsed_remainder: str = ''


@dataclass(frozen=True)
class _Block:
    kind: str
    start: int
    inner_start: int
    inner_end: int
    end: int


def _scan(response: str) -> tuple[list[_Block], bool]:
    """
    Split a response into tagged blocks

    :return: Blocks in order, and whether anything but whitespace occurs outside them
    """
    blocks = []
    extra = False
    pos = 0
    while True:
        m = RE_OPEN_TAG.search(response, pos)
        before = response[pos:m.start() if m else len(response)]
        if before.strip():
            extra = True
        if not m:
            break

        kind = m.group(1)
        close = response.find(CLOSE_TAGS[kind], m.end())
        if close == -1:
            # Unterminated block: the rest of the response is stray text
            extra = True
            break

        end = close + len(CLOSE_TAGS[kind])
        blocks.append(_Block(kind, m.start(), m.end(), close, end))
        pos = end
    return blocks, extra


def _violations(blocks: list[_Block], extra: bool) -> list[str]:
    reasons = [b for b in blocks if b.kind == 'reason']
    tools = [b for b in blocks if b.kind == 'tool']
    out = []
    if not reasons:
        out.append('missing-reason')
    if not tools:
        out.append('missing-tool')
    if len(reasons) > 1:
        out.append('duplicate-reason')
    if len(tools) > 1:
        out.append('duplicate-tool')
    if reasons and tools and tools[0].start < reasons[0].start:
        out.append('order')
    if extra:
        out.append('extra-text')
    return out


def validate_format(response: str) -> tuple[int, list[str]]:
    """
    Check the output grammar: exactly one reason block and one tool block, reason first, and
    nothing but whitespace outside them

    :param response: Raw model response
    :return: (verdict 0/1, list of violated rules)
    """
    violations = _violations(*_scan(response))
    return int(not violations), violations


def _open_value_at(text: str, pos: int) -> int:
    """
    Find the start of the innermost JSON array/object still open at pos, ignoring string contents
    """
    stack = []
    in_str = escaped = False
    for i, ch in enumerate(text[:pos]):
        if in_str:
            if escaped:
                escaped = False
            elif ch == '\\':
                escaped = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch in '[{':
            stack.append(i)
        elif ch in ']}' and stack:
            stack.pop()
    return stack[-1] if stack else pos


def _reject_constant(name: str):
    raise ValueError(f'{name} is not valid JSON')


def parse_tool_payload(payload: str) -> ToolPayload:
    """
    Parse the interior of a tool block

    :param payload: Text between <tool> and </tool>
    :return: Rejection marker, canonical action list, or a parse failure with its position
    """
    if payload.strip() == REJECTION_STRING:
        return RejectionMarker(payload.strip())
    try:
        raw = json.loads(payload, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        return ParseFailure(e.msg, _open_value_at(payload, e.pos), e.pos)
    except ValueError as e:
        return ParseFailure(str(e), 0, 0)
    except RecursionError:
        return ParseFailure('JSON nested too deeply', 0, 0)
    try:
        return ActionList.from_json(raw)
    except InvalidValue as e:
        return ParseFailure(str(e), len(payload) - len(payload.lstrip()), 0)
    except RecursionError:
        return ParseFailure('arguments nested too deeply', 0, 0)


def parse_response(response: str) -> ParsedResponse:
    """
    Split a response into reasoning text and tool payload

    Malformed JSON never raises: it becomes a ParseFailure, which scores as incorrect.
    """
    blocks, extra = _scan(response)
    violations = _violations(blocks, extra)

    reason = next((b for b in blocks if b.kind == 'reason'), None)
    tool = next((b for b in blocks if b.kind == 'tool'), None)

    reason_text = response[reason.inner_start:reason.inner_end] if reason else None
    if tool is None:
        payload = ParseFailure('response has no tool block')
    else:
        payload = parse_tool_payload(response[tool.inner_start:tool.inner_end])

    return ParsedResponse(not violations, reason_text, payload, tuple(violations))


def render_response(reason_text: str, payload: ActionList | RejectionMarker) -> str:
    """
    Render a well-formed response from its parts (inverse of parse_response on the canonical subset)
    """
    if isinstance(payload, RejectionMarker):
        tool = REJECTION_STRING
    else:
        tool = json.dumps(payload.to_json(), ensure_ascii=False)
    return f'{REASON_OPEN}{reason_text}{REASON_CLOSE}\n{TOOL_OPEN}{tool}{TOOL_CLOSE}'


def parse_answer_doc(reason_text: str | None) -> AnswerDoc:
    """
    Parse the per-call, per-parameter reasoning snippets out of a reason block

    Recognized structure (anything else lands in unparsed_remainder)::

        For #get_current_weather#:
        - location: city plus state abbreviation
        - unit: default fahrenheit

    A parameter's analysis runs until the next parameter line, the next call header, or the end.
    Parameter names are split off at the first colon.

    :param reason_text: Interior of the reason block
    :return: Entries in reasoning order
    """
    entries: list[tuple[str, dict[str, list[str]]]] = []
    remainder: list[str] = []
    param: str | None = None

    for line in (reason_text or '').splitlines():
        m = RE_CALL_HEADER.match(line)
        if m:
            entries.append((m.group('name'), {}))
            param = None
            continue

        m = RE_PARAM_LINE.match(line) if entries else None
        if m and m.group('param'):
            param = m.group('param')
            entries[-1][1].setdefault(param, []).append(m.group('rest').strip())
            continue

        if param is not None:
            entries[-1][1][param].append(line.strip())
        else:
            remainder.append(line)

    return AnswerDoc(
        tuple(AnswerEntry(name, {p: '\n'.join(s for s in parts if s) for p, parts in args.items()})
              for name, args in entries),
        '\n'.join(remainder).strip(),
    )
