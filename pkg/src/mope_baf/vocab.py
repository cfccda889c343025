"""Toy vocabulary shared by the data generator and the model heads.

Layout of the id space:
  0          [CLS]
  1          [MASK]
  2, 3       polarity tokens (positive / negative)
  4..9       template words
  10..15     label words read off by the verbalizer
  16..       distractor tokens (up to the configured vocab size)
"""

CLS_ID = 0
MASK_ID = 1
POS_TOK = 2
NEG_TOK = 3

TEMPLATE_IDS = {
    "sarcasm2": [4, 5, 6, 7],   # "the image-text pair is"
    "sentiment3": [8, 9, 6],    # "sentiment of the pair is"
}

# class id -> label word id
VERBALIZERS = {
    "sarcasm2": {0: 10, 1: 11},          # nonsarcasm, sarcasm
    "sentiment3": {0: 12, 1: 13, 2: 14},  # negative, neutral, positive
}

DISTRACTOR_START = 16
MIN_VOCAB = DISTRACTOR_START + 1


def is_distractor(token_id: int) -> bool:
    return token_id >= DISTRACTOR_START
