"""
The zero-shot LLM baseline without a network
============================================

Build the prompts, answer them with the built-in mock clients and see how
completions are parsed and scored. Pointing ``HttpCompletionClient`` at a
real endpoint (``LLM_ENDPOINT`` / ``LLM_API_KEY``) swaps the mock out.
"""

# %%
from heed.core import Task
from heed.llm_baseline import (
    OracleClient, StaticClient, build_prompt, parse_llm_spans, prompt_chunks, run_baseline,
)
from heed.pagegen import GenConfig, generate_page

records = [generate_page(1, i, GenConfig(seed=1))[1] for i in range(5)]
chunk = prompt_chunks(records[0], with_hypertext=True)[0]
print(build_prompt(chunk, Task.PRICE, with_hypertext=True)[:500], "...")

# %%
# real models rarely answer in the exact format asked for
for reply in ["[(3,4)]]", "Sure: [[3, 4], [9, 9]]", "[(5,2)]", "no idea"]:
    print(repr(reply), "->", parse_llm_spans(reply))

# %%
for name, client in [("oracle", OracleClient.from_records(records)), ("empty", StaticClient("[]"))]:
    o = run_baseline(records, client).report.overall
    print(f"{name:>6}: P {o.precision:.1f}  R {o.recall:.1f}  F1 {o.f1:.1f}")
