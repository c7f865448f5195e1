"""Hand-traced four-image scenario shared by orchestrator and service tests.

Geometry: four unit vectors at 0, 10, 80, and 90 degrees — two tight
blobs 70 degrees apart. Every number asserted against this scenario
(ranks, representatives, chosen questions) was derived by hand from the
scripted backends below; see tests/data/golden_episode.json.
"""

import math

import numpy as np

from chatsearch.backends import (
    Backends,
    ChatBackend,
    PoolCaptionBackend,
    ScriptedAnswerBackend,
    ScriptedEmbedBackend,
)
from chatsearch.corpus import ImagePool, ImageRecord
from chatsearch.orchestrator import EpisodeConfig


def unit(degrees):
    rad = math.radians(degrees)
    return [math.cos(rad), math.sin(rad)]


def golden_pool():
    return ImagePool([
        ImageRecord(id="img-0", embedding=np.array(unit(0)),
                    caption="a red ball on a wooden table",
                    image_uri="https://images.example/0.png"),
        ImageRecord(id="img-1", embedding=np.array(unit(10)),
                    caption="a red ball held by a child",
                    image_uri="https://images.example/1.png"),
        ImageRecord(id="img-2", embedding=np.array(unit(80)),
                    caption="a kite with a long tail",
                    image_uri="https://images.example/2.png"),
        ImageRecord(id="img-3", embedding=np.array(unit(90)),
                    caption="a blue kite in the sky",
                    image_uri="https://images.example/3.png"),
    ])


class GoldenChat(ChatBackend):
    """Hand-scripted chat covering all three roles of the golden episode."""

    QUESTIONS = ["is it a ball?", "is it red?", "does it fly?", "what color is it?"]
    UNCERTAIN = {"is it a ball?", "does it fly?", "what color is it?"}

    def __init__(self):
        self.question_calls = 0

    def chat(self, request):
        prompt = request.prompt
        if "Reformulated caption:" in prompt:
            if "A: yes" in prompt:
                return "a flying toy that is not a ball"
            return "a toy that is not a ball"
        if 'reply with the single word "uncertain"' in prompt:
            for question in self.QUESTIONS:
                if f"Question: {question}" in prompt:
                    return "uncertain" if question in self.UNCERTAIN else "it is red"
            raise AssertionError("unexpected filter prompt")
        if prompt.rstrip().endswith("Question:"):
            question = self.QUESTIONS[self.question_calls]
            self.question_calls += 1
            return question
        raise AssertionError("unexpected prompt")


def golden_backends(pool):
    embedder = ScriptedEmbedBackend({
        "a toy": unit(4),
        "a toy that is not a ball": unit(84),
        "a flying toy that is not a ball": unit(88),
        # Appended-question texts used by the KL selection stage.
        "a toy is it a ball?": unit(30),
        "a toy that is not a ball does it fly?": unit(84),   # zero KL, must win
        "a toy that is not a ball what color is it?": unit(20),
    })
    answers = ScriptedAnswerBackend({
        ("img-3", "is it a ball?"): "no",
        ("img-3", "does it fly?"): "yes",
    })
    return Backends(chat=GoldenChat(), embed=embedder,
                    caption=PoolCaptionBackend(pool), answer=answers)


def golden_config(**overrides):
    params = dict(max_rounds=2, n=4, m=2, k_questions=2, seed=0)
    params.update(overrides)
    return EpisodeConfig(**params)
