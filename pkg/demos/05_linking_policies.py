"""The three resolution policies on a planted-error instance, step by step.

One instance, one planted deviation: abstention stops at the flag, the
surrogate filter decides whether to push on, and the human loop traces the
flag back to a table and asks about it.
"""

from linkguard.detector import NeverFireDetector, OracleDetector
from linkguard.runtime import LinkRun, run_policy_abstain, run_policy_surrogate
from linkguard.simulate import SimConfig, SimWorld

world = SimWorld(SimConfig(seed=21, p_err=0.3), 50)
idx = next(i for i in range(50) if world.instances[i].planted_positions)
inst = world.instances[idx]
print("question:", inst.question)
print("ground truth:", inst.gt_tables)
print("deviation planted at position", inst.planted_positions)

# what the model would do unsupervised
free = run_policy_abstain(world.table_model(idx), NeverFireDetector(), world.catalog, inst.question)
print("\nunsupervised run decodes:", free.linked, "(wrong)" if set(free.linked) != set(inst.gt_tables) else "(right)")

# abstention: stop at the first flag
model = world.table_model(idx)
session = run_policy_abstain(model, OracleDetector(model), world.catalog, inst.question)
print(f"\nabstain policy: {session.status} ({session.abstain_reason})")

# surrogate filter: the stand-in reviewer decides
surrogate = world.surrogate(idx)
session = run_policy_surrogate(model, OracleDetector(model), surrogate, world.catalog, inst.question)
print(f"surrogate policy: {session.status}; transcript:")
for entry in session.transcript:
    print("  ", entry)

# human loop: answer the questions as they arrive
run = LinkRun(model, OracleDetector(model), world.catalog, "human", question=inst.question)
status = run.start()
oracle = world.oracle_responder(idx)
while status == "awaiting_answer":
    q = run.pending
    if q.kind.startswith("confirm"):
        answer = oracle.relevance(q.kind, q.subject, q.context)
        print(f'human loop: "is {q.subject} relevant?" -> {answer}')
    else:
        answer = oracle.provide(q.kind, q.context)
        print(f'human loop: "which table is correct?" -> {answer}')
    status = run.submit(q.question_id, answer)
outcome = run.outcome()
print(f"human policy: {outcome.status}, linked {outcome.tables}")
assert set(outcome.tables) == set(inst.gt_tables)
