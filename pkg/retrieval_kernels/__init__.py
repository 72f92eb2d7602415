import importlib.util
import pkgutil
from . import corpus_actions, embedding_actions, retrieval_actions, evaluation_actions, loss_actions

actions = {}


def get_actions():
    return actions.copy()


def register_action(name, module):
    assert name not in actions, f"action {name!r} already registered"
    actions[name] = module


def register_actions():
    if actions:
        return
    register_action("ingest", corpus_actions)
    register_action("synth", corpus_actions)
    register_action("embed", embedding_actions)
    register_action("index", embedding_actions)
    register_action("search", retrieval_actions)
    register_action("rerank", retrieval_actions)
    register_action("mine", retrieval_actions)
    register_action("eval", evaluation_actions)
    register_action("bench", evaluation_actions)
    register_action("loss", loss_actions)
    # plugins named retrieval_kernels_* may add actions or rerankers
    for pkg in pkgutil.iter_modules():
        if pkg.name.startswith("retrieval_kernels_"):
            spec = importlib.util.find_spec(pkg.name)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
            getattr(module, "register_actions")()
