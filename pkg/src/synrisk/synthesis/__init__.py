from .cart import CartDraws, CartModel, CartSynthesizer, Tree, build_tree, cart_generate, fit_cart
from .mixture import (MixtureDraw, MixtureDraws, MixtureSynthesizer, fit_mixture,
                      generate_mixture_release, predictive_density)
from .release import SyntheticRelease, read_release, write_release

__all__ = [
    "CartDraws", "CartModel", "CartSynthesizer", "Tree", "build_tree", "cart_generate",
    "fit_cart", "MixtureDraw", "MixtureDraws", "MixtureSynthesizer", "fit_mixture",
    "generate_mixture_release", "predictive_density", "SyntheticRelease", "read_release",
    "write_release",
]
