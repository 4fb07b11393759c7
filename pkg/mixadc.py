#!/usr/bin/env python3
""" Command line interface: campaigns, codebooks and single-drop allocations. """
import click
from cli import commands


@click.group()
def run():
    pass


for command in commands:
    run.add_command(command)

if __name__ == "__main__":
    run()
