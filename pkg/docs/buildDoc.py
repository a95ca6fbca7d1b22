#!/usr/bin/env python
'''
Development script to re-build the documentation pages.

The main API documentation is done using pdoc (https://pdoc.dev/)

The page with the command line help is generated here by combining the
output of 'coxmap -h', and of 'coxmap COMMAND -h' for each command, with
cmdline.md.template

After running this script, anything which changed (see 'git diff') should
be committed to the repository.
'''
import sys
import os
import subprocess
import shutil

from coxmap import pipeline


APIDIR = 'api'
CMDLINE_MD = 'cmdline.md'
CMDLINE_TEMPLATE = '{}.template'.format(CMDLINE_MD)


def helpText(args):
    "Output of coxmap with the given arguments"
    proc = subprocess.Popen(['coxmap'] + args, stdout=subprocess.PIPE,
        universal_newlines=True)
    (stdout, stderr) = proc.communicate()
    return stdout


def main():
    """
    Main routine
    """
    docDir = os.path.dirname(os.path.abspath(sys.argv[0]))

    # Re-build all the pdoc API pages
    apiDocDir = os.path.join(docDir, APIDIR)
    if os.path.exists(apiDocDir):
        shutil.rmtree(apiDocDir)
    pdocCmd = ['pdoc', '--docformat', 'numpy', '--no-search',
                '-o', apiDocDir, 'coxmap']
    proc = subprocess.Popen(pdocCmd)

    sections = ["```bash\n{}```\n".format(helpText(['-h']))]
    for command in pipeline.COMMANDS:
        sections.append("## {}\n```bash\n{}```\n".format(command,
            helpText([command, '-h'])))

    templateFile = os.path.join(docDir, CMDLINE_TEMPLATE)
    with open(templateFile) as f:
        templateStr = f.read()
    cmdlineMdStr = templateStr.replace('$CMDLINEHELP', '\n'.join(sections))
    with open(os.path.join(docDir, CMDLINE_MD), 'w') as f:
        f.write(cmdlineMdStr)
    proc.wait()


if __name__ == "__main__":
    main()
