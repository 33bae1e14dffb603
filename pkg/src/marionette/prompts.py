"""Built-in role and action prompt templates.

Role prompts fix the agent's identity; action prompts instruct either a tool
invocation (the agent must answer with a JSON action object naming the tool
parameters) or a reasoning pattern (the agent must answer with the
REASONING RESULT / FINAL ANSWER template so downstream answer extraction
works).  Placeholders use ``{name}`` with every name declared on the
template.
"""
from __future__ import annotations

from .agents import AgentSpec, ReasoningPattern, Tool
from .gateway import PromptTemplate

_TASK_HEADER = "TASK: {task}\n\n"

TOOL_ROLE_PROMPTS: dict[Tool, str] = {
    Tool.READ_FILE: (
        "You are an expert in file handling. Responsible for reading files "
        "and extracting relevant information (read_file)."
    ),
    Tool.SEARCH_ARXIV: (
        "You are an expert in academic research. Responsible for searching "
        "relevant papers on arXiv (search_arxiv)."
    ),
    Tool.SEARCH_BING: (
        "You are an expert in web search. Responsible for retrieving "
        "information via Bing (search_bing)."
    ),
    Tool.ACCESS_WEBSITE: (
        "You are an expert in accessing and parsing websites. Responsible "
        "for extracting data from specific URLs (access_website)."
    ),
    Tool.RUN_PYTHON: (
        "You are an expert in Python programming. Responsible for executing "
        "Python code and returning results (run_python)."
    ),
}

ROLE_PROMPTS: dict[ReasoningPattern, str] = {
    ReasoningPattern.PLANNING: (
        "You are an expert in task decomposition and planning. Responsible "
        "for generating structured plans to solve complex tasks (planning)."
    ),
    ReasoningPattern.REASONING: (
        "You are an expert in logical reasoning. Responsible for "
        "synthesizing solutions to sub-problems (reasoning)."
    ),
    ReasoningPattern.CRITIQUE: (
        "You are an expert in critique and verification. Responsible for "
        "identifying flaws and providing feedback on prior reasoning (critique)."
    ),
    ReasoningPattern.REFLECT: (
        "You are an expert in metacognitive reflection. Responsible for "
        "analyzing the overall reasoning trajectory and proposing "
        "improvements (reflect)."
    ),
    ReasoningPattern.QUESTION: (
        "You are an expert in problem decomposition. Responsible for "
        "generating clarifying or follow-up sub-questions (question)."
    ),
    ReasoningPattern.SUMMARIZE: (
        "You are an expert in summarization. Responsible for generating "
        "concise summaries of intermediate results (summarize)."
    ),
    ReasoningPattern.CONCLUDE: (
        "You are an expert in synthesis. Responsible for producing the final "
        "conclusions based on collective reasoning outcomes (conclude)."
    ),
    ReasoningPattern.MODIFY: (
        "You are an expert in error analysis and correction. Responsible for "
        "identifying errors and revising prior outputs accordingly (modify)."
    ),
}

TOOL_ACTION_PROMPTS: dict[Tool, str] = {
    Tool.SEARCH_ARXIV: (
        "You have chosen to search for academic papers on arXiv. Please "
        "provide specific terms related to academic research, such as the "
        "title of a paper, keywords, or topics in fields like physics, "
        "mathematics, computer science, or machine learning. Return in json "
        'format. Example: {"action": "search_arxiv", "parameter": "quantum computing"}'
    ),
    Tool.SEARCH_BING: (
        "You have chosen to search for information using Bing. Please "
        "provide descriptive phrases or keywords related to your query, "
        "including concepts, names, events, or specific questions to get a "
        "broad range of results, including news, articles, and websites. "
        'Return in json format. Example: {"action": "search_bing", '
        '"parameter": "latest advancements in AI"}'
    ),
    Tool.ACCESS_WEBSITE: (
        "You have chosen to access a website. Please provide the URL you "
        "want to access or the URL most relevant to the current question. "
        'Return in json format. Example: {"action": "access_website", '
        '"parameter": "https://www.example.com"}'
    ),
    Tool.RUN_PYTHON: (
        "You have chosen to write and run Python code. Please write generic "
        "Python code in the parameter to solve this type of problems using "
        "only standard python libraries. Make sure you use the print "
        "function for all output when relevant. Return in json format. "
        'Example: {"action": "run_python", "parameter": "print(\'Hello, World!\')"}'
    ),
    Tool.READ_FILE: (
        "You have chosen to read a file. Please provide the filename you "
        'want to read. Return in json format. Example: {"action": '
        '"read_file", "parameter": "data.txt"}'
    ),
}

_RESULT_TEMPLATE = "REASONING RESULT: [YOUR REASONING RESULT]."
_ANSWER_TEMPLATE = "FINAL ANSWER: [YOUR FINAL ANSWER]."

REASONING_ACTION_PROMPTS: dict[ReasoningPattern, str] = {
    ReasoningPattern.PLANNING: (
        "Decompose the question and plan the next steps to address the "
        "question. You should complete your planning using the following "
        f"template:\n\n{_RESULT_TEMPLATE}"
    ),
    ReasoningPattern.REASONING: (
        "Now, you need to continue the reasoning to get closer to the "
        "correct answer. You should finish your reasoning with the following "
        f"template:\n\n{_RESULT_TEMPLATE}\n\nFinish your answer with:\n\n{_ANSWER_TEMPLATE}"
    ),
    ReasoningPattern.CRITIQUE: (
        "You need to critique the previous reasoning. Complete your "
        f"reasoning using:\n\n{_RESULT_TEMPLATE}\n\nConclude with:\n\n{_ANSWER_TEMPLATE}"
    ),
    ReasoningPattern.REFLECT: (
        "You will be provided with a previous reasoning attempt where you "
        "had access to relevant context and were tasked with answering a "
        "question. In a few sentences, diagnose the potential cause of "
        "failure or discrepancy, and outline a new, concise, high-level plan "
        "to prevent the same issue. Reflect on the current state of the task "
        f"and propose the next steps.\n\nConclude with:\n\n{_RESULT_TEMPLATE}\n\n{_ANSWER_TEMPLATE}"
    ),
    ReasoningPattern.QUESTION: (
        "Your task is to propose the next sub-question along with its "
        "answer. Ensure it logically follows from the previous reasoning and "
        "addresses any gaps. Provide a well-reasoned answer, supported by "
        f"evidence or logical arguments.\n\nConclude with:\n\n{_RESULT_TEMPLATE}\n\n{_ANSWER_TEMPLATE}"
    ),
    ReasoningPattern.SUMMARIZE: (
        "You need to summarize previous results and provide some "
        "intermediate conclusions. Summarize the reasoning paths and provide "
        f"a final conclusion.\n\nFinish your reasoning with:\n\n{_RESULT_TEMPLATE}\n\nThen:\n\n{_ANSWER_TEMPLATE}"
    ),
    ReasoningPattern.CONCLUDE: (
        "You need to conclude the task and provide a final answer.\n\n"
        f"Finish with:\n\n{_RESULT_TEMPLATE}\n\nThen:\n\n{_ANSWER_TEMPLATE}"
    ),
    ReasoningPattern.MODIFY: (
        "You need to identify and correct errors in the previous reasoning. "
        "Clearly state which part of the previous reasoning was incorrect, "
        "why it was incorrect, and what the correct understanding is. Please "
        "explicitly point out and correct any errors, misconceptions, or "
        f"inaccuracies.\n\nUse this template:\n\n{_RESULT_TEMPLATE}\n\nThen:\n\n{_ANSWER_TEMPLATE}"
    ),
}


def default_template(agent: AgentSpec) -> PromptTemplate:
    """Template for an agent: tool agents get the tool action prompt, others
    the prompt of their reasoning pattern.  The terminator has no template."""
    if agent.is_terminator:
        raise ValueError("the terminator is never prompted")
    if agent.tool is not Tool.NONE:
        return PromptTemplate(
            role_prompt=TOOL_ROLE_PROMPTS[agent.tool],
            action_prompt=_TASK_HEADER + TOOL_ACTION_PROMPTS[agent.tool],
            placeholders=("task",),
        )
    return PromptTemplate(
        role_prompt=ROLE_PROMPTS[agent.reasoning_pattern],
        action_prompt=_TASK_HEADER + REASONING_ACTION_PROMPTS[agent.reasoning_pattern],
        placeholders=("task",),
    )
