from .allocate import allocate
from .campaign import campaign
from .codebook import codebook

commands = [allocate, campaign, codebook]
