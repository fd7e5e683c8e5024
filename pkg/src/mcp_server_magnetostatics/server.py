#!/usr/bin/env python3

"""
Magnetostatics MCP Server

A Model Context Protocol server around the nonlinear magnetostatics solver.
Clients can solve single cells, run the (method, h, p) study, check convergence
certificates and export field snapshots; outcomes are kept in a SQLite results store.
"""

import os
import sys
import logging
from mcp.server.models import InitializationOptions
from mcp.server import NotificationOptions, Server
import mcp.server.stdio
from pydantic import AnyUrl

from .database import SqliteDatabase
from .resource_handlers import handle_list_resources, handle_read_resource
from .tool_handlers import list_tools, handle_call_tool

# reconfigure UnicodeEncodeError prone default (i.e. windows-1252) to utf-8
if sys.platform == "win32" and os.environ.get('PYTHONIOENCODING') is None:
    sys.stdin.reconfigure(encoding="utf-8")
    sys.stdout.reconfigure(encoding="utf-8")
    sys.stderr.reconfigure(encoding="utf-8")

logger = logging.getLogger('mcp_magnetostatics_server')

SERVER_NAME = "magnetostatics"


def create_server(db: SqliteDatabase) -> Server:
    """Server with the resource and tool handlers registered"""
    server = Server(SERVER_NAME)
    logger.debug("Registering handlers")

    @server.list_resources()
    async def handle_list_resources_wrapper() -> list:
        """Wrapper for the list_resources handler"""
        return handle_list_resources()

    @server.read_resource()
    async def handle_read_resource_wrapper(uri: AnyUrl) -> str:
        """Wrapper for the read_resource handler"""
        return handle_read_resource(db, uri)

    @server.list_tools()
    async def handle_list_tools_wrapper() -> list:
        """Wrapper for the list_tools handler"""
        return list_tools()

    @server.call_tool()
    async def handle_call_tool_wrapper(name: str, arguments: dict | None) -> list:
        """Wrapper for the call_tool handler"""
        return handle_call_tool(db, name, arguments)

    return server


async def main(db_path: str):
    """Main entry point for the Magnetostatics MCP Server"""
    from . import __version__

    logger.info(f"Starting Magnetostatics MCP Server with results store: {db_path}")
    db = SqliteDatabase(db_path)
    server = create_server(db)

    async with mcp.server.stdio.stdio_server() as (read_stream, write_stream):
        logger.info("Magnetostatics Server running with stdio transport")
        await server.run(
            read_stream,
            write_stream,
            InitializationOptions(
                server_name=SERVER_NAME,
                server_version=__version__,
                capabilities=server.get_capabilities(
                    notification_options=NotificationOptions(),
                    experimental_capabilities={},
                ),
            ),
        )
