"""Shared inference-task fixtures: an English NLI-style 3-choice task set."""

from instruct_forge.evaluation import ChoiceTask

NLI_INSTRUCTION = (
    "Please answer the relationship between the premise and the hypothesis "
    "from entailment, contradiction, and neutral."
)

NLI_CONSTRAINTS = (
    "Constraints:\n"
    "- If the hypothesis can be derived from the premise using logical or "
    "common sense knowledge, output entailment\n"
    "- If the premise and the hypothesis are incompatible, output contradiction\n"
    "- If neither of the above, output neutral"
)

NLI_CHOICES = ("entailment", "contradiction", "neutral")


def nli_task(premise, hypothesis, gold, version="v0.2"):
    return ChoiceTask(
        instruction=NLI_INSTRUCTION,
        constraints=NLI_CONSTRAINTS,
        fields={"Premise": premise, "Hypothesis": hypothesis},
        choices=NLI_CHOICES,
        gold=gold,
        version=version,
        answer_label="Relationship",
    )


def demos(version="v0.2"):
    return (
        nli_task("Two women are jumping to catch a frisbee in the grass.",
                 "The women are trying to catch a frisbee.", 0, version),
        nli_task("A man is riding a bicycle down the street.",
                 "The man is sleeping in his bed.", 1, version),
        nli_task("A child is holding a red balloon.",
                 "The child received the balloon at a festival.", 2, version),
    )


def query(version="v0.2"):
    return nli_task(
        "There are two children, and bananas and kiwis are placed next to the mixer.",
        "There are children with droppers at the table where the mixer is placed.",
        2, version)
