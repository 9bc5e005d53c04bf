from __future__ import annotations

import json

from .constants import REASON_CLOSE, REASON_OPEN, REJECTION_STRING, TOOL_OPEN
from .domain import Instance

SYSTEM_PROMPT = f"""You are an expert in composing functions. You are given a question and a set of possible functions.
Based on the question, you will need to make one or more function/tool calls to achieve the purpose.

In each action step, you MUST:
1. Think about the 2-step reasoning process in the mind and enclosed your reasoning within <reason></reason> tags.
   - Step1: Analyze the question and highlight the chosen function in the format of: #fun_name#
   - Step2: For each function you decide to call, you should analyze the value of each parameter in the format of: - params_name1: analysis_process
2. Then, provide the final function call with function names and arguments in the format of: <tool>[{{"name": "func_name1", "arguments": {{"params_name1": params_value1, "params_name2": params_value2...}}}}, {{"name": "func_name2", "arguments": {{}}}}]</tool>
3. Make sure both the reasoning and the tool call steps are included together in one single reply.

Output format:
<reason>
Step1: ...
Step2:
For #fun_name1#:
- params_name1: analysis_process
...
</reason>
<tool>[{{"name": "func_name1", "arguments": {{"params_name1": params_value1, "params_name2": params_value2...}}}}, {{"name": "func_name2", "arguments": {{}}}}]</tool>
You SHOULD NOT include any other text in the response.

Important Notes
1. If the given question lacks the arguments required by the function, point it out. If this required parameter has enum option, you can choose a single unambiguous match from listed option.
2. If none of the function can be used, write it in <tool>{REJECTION_STRING}</tool>."""


def render_system_prompt() -> str:
    return SYSTEM_PROMPT


def render_user_prompt(instance: Instance) -> str:
    """
    User message for one instance: the question followed by the tool documentation as JSON
    """
    tools = json.dumps([t.to_json() for t in instance.tools], ensure_ascii=False, indent=2)
    return f'Question: {instance.query}\n\nHere is a list of functions in JSON format that you can invoke:\n{tools}'


def render_messages(instance: Instance, prefix: str | None = None) -> list[dict]:
    """
    Chat messages for the instance; with a prefix, the assistant turn is pre-filled for continuation
    """
    msgs = [{'role': 'system', 'content': render_system_prompt()},
            {'role': 'user', 'content': render_user_prompt(instance)}]
    if prefix is not None:
        msgs.append({'role': 'assistant', 'content': prefix})
    return msgs


def render_prefix(reason_text: str) -> str:
    """
    The fixed prefix a student continues from: <reason>R</reason><tool>
    """
    return f'{REASON_OPEN}{reason_text}{REASON_CLOSE}{TOOL_OPEN}'
