"""Deterministic templated review generator for desk-scale experiments.

Sentences are short product/media reviews assembled from word pools. The
label comes from the polarity of the sentiment slot, flipped by negation
("not great" is negative, "never awful" is positive). Class balance,
negation rate, and size are knobs so tests can build easy, hard, or
imbalanced corpora from the same machinery.
"""

import numpy as np

from trisent.data import LabeledExample

POSITIVE_ADJ = [
    "great", "excellent", "wonderful", "fantastic", "superb", "delightful",
    "amazing", "brilliant", "charming", "impressive", "lovely", "outstanding",
    "pleasant", "refreshing", "remarkable", "satisfying", "splendid",
    "stellar", "stunning", "terrific", "enjoyable", "flawless", "graceful",
    "memorable",
]
NEGATIVE_ADJ = [
    "terrible", "awful", "dreadful", "horrible", "disappointing", "abysmal",
    "annoying", "atrocious", "boring", "clumsy", "defective", "dismal",
    "dull", "frustrating", "grating", "lousy", "mediocre", "messy",
    "miserable", "painful", "pathetic", "shoddy", "tedious", "unbearable",
]
NEUTRAL_ADJ = [
    "average", "ordinary", "standard", "typical", "plain", "acceptable",
    "adequate", "conventional", "expected", "fair", "moderate", "modest",
    "neutral", "normal", "passable", "predictable", "reasonable", "regular",
    "routine", "simple", "tolerable", "unremarkable", "usual", "middling",
]
NOUNS = [
    "movie", "film", "show", "album", "song", "book", "novel", "story",
    "phone", "laptop", "tablet", "camera", "speaker", "headset", "monitor",
    "keyboard", "charger", "printer", "meal", "dinner", "lunch", "breakfast",
    "pizza", "burger", "coffee", "dessert", "soup", "salad", "hotel", "room",
    "suite", "hostel", "apartment", "cabin", "service", "staff", "crew",
    "driver", "waiter", "barista", "game", "sequel", "trailer", "episode",
    "season", "concert", "venue", "gadget", "blender", "toaster", "vacuum",
    "mattress", "jacket", "backpack", "wallet", "sofa", "desk", "lamp",
    "bicycle", "scooter",
]
OPENERS = [
    "honestly", "overall", "frankly", "surprisingly", "admittedly",
    "ultimately", "apparently", "truthfully", "basically", "generally",
    "somehow", "altogether",
]
VERBS = ["was", "seemed", "felt", "looked", "sounded", "stayed"]
INTENSIFIERS = ["really", "quite", "very", "rather", "truly", "fairly",
                "pretty", "genuinely"]
TAILS = [
    "in my opinion", "to be honest", "all things considered", "for the price",
    "after a week", "from start to finish", "in every way", "by any measure",
    "for our family", "on second thought", "despite the hype", "without question",
]
NEGATORS = ["not", "never", "hardly"]
DETERMINERS = ["the", "this", "that", "my", "our", "their"]

ADJ = {"positive": POSITIVE_ADJ, "negative": NEGATIVE_ADJ, "neutral": NEUTRAL_ADJ}
# negation flips polarity; negated neutral stays neutral
FLIP = {"positive": "negative", "negative": "positive", "neutral": "neutral"}


def _sentence(rng: np.random.Generator, label: str, negation_rate: float):
    det = rng.choice(DETERMINERS)
    noun = rng.choice(NOUNS)
    verb = rng.choice(VERBS)
    negate = rng.random() < negation_rate
    slot_label = FLIP[label] if negate else label
    adj = rng.choice(ADJ[slot_label])
    slot = f"{rng.choice(NEGATORS)} {adj}" if negate else adj
    template = rng.integers(0, 4)
    if template == 0:
        return f"{det} {noun} {verb} {slot}"
    if template == 1:
        return f"{rng.choice(OPENERS)} , {det} {noun} {verb} {slot}"
    if template == 2:
        return f"{det} {noun} {verb} {rng.choice(INTENSIFIERS)} {slot}"
    return f"{det} {noun} {verb} {slot} {rng.choice(TAILS)}"


def make_corpus(n: int, seed: int, class_weights=None, negation_rate: float = 0.3,
                source: str = "synthetic"):
    """n labeled examples drawn from the template grammar."""
    rng = np.random.default_rng(seed)
    labels = ["negative", "neutral", "positive"]
    if class_weights is None:
        class_weights = {name: 1.0 for name in labels}
    w = np.asarray([class_weights.get(name, 0.0) for name in labels], dtype=float)
    w = w / w.sum()
    out = []
    for _ in range(n):
        label = labels[rng.choice(3, p=w)]
        out.append(LabeledExample(_sentence(rng, label, negation_rate), label, source))
    return out


def train_test_corpus(n_train: int, n_test: int, seed: int, **kwargs):
    """Disjoint seeded train/test draws from the same distribution."""
    return (make_corpus(n_train, seed * 2 + 1, **kwargs),
            make_corpus(n_test, seed * 2 + 2, **kwargs))
