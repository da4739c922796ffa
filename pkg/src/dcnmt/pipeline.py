"""Text-in / text-out wrappers around the model and classifier.

A Translator owns a loaded model plus the BPE segmenter and hides the
token-id plumbing: segment, map to ids, greedy-decode, and undo the
subword segmentation.  A DomainPredictor does the same for the
classifier.  Both are immutable after construction and safe to share
across threads for concurrent reads.
"""

from __future__ import annotations

from .classifier import classify, load_classifier
from .model import greedy_decode, load_model
from .text import BpeModel, apply_bpe, detokenize


class DomainPredictor:
    def __init__(self, params, config, bpe=None):
        self.params = params
        self.config = config
        self.bpe = bpe

    @classmethod
    def load(cls, path, bpe_path=None):
        params, config = load_classifier(path)
        bpe = BpeModel.load(bpe_path) if bpe_path else None
        return cls(params, config, bpe)

    def _ids(self, text):
        toks = apply_bpe(self.bpe, text) if self.bpe is not None else text.split()
        return [self.config.vocab.lookup(t) for t in toks]

    def predict(self, text):
        """Predicted domain tag surface for one raw sentence."""
        tag_id, _ = classify(self.params, self._ids(text))
        return self.config.tags.surface(tag_id)

    def predict_id(self, text):
        tag_id, _ = classify(self.params, self._ids(text))
        return tag_id


class Translator:
    def __init__(self, params, config, bpe=None):
        self.params = params
        self.config = config
        self.bpe = bpe

    @classmethod
    def load(cls, path, bpe_path=None):
        params, config = load_model(path)
        bpe = BpeModel.load(bpe_path) if bpe_path else None
        return cls(params, config, bpe)

    def translate(self, text, domain=None, predictor=None):
        """Translate one raw source sentence to raw target text.

        ``domain`` is a tag surface such as ``@MED@`` (the oracle
        condition); when it is None and a ``predictor`` is given, the
        tag is predicted per sentence (the automatic condition).  Empty
        input raises ValueError; callers that stream lines should skip
        empties themselves.
        """
        toks = apply_bpe(self.bpe, text) if self.bpe is not None else text.split()
        ids = [self.config.vocab.lookup(t) for t in toks]
        tag_id = None
        if domain is not None:
            tag_id = self.config.tags.tag_id(domain)
        elif predictor is not None:
            tag_id = self.config.tags.tag_id(predictor.predict(text))
        out_ids = greedy_decode(self.params, self.config, ids, domain=tag_id)
        return detokenize([self.config.vocab.token(i) for i in out_ids])
