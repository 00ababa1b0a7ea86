int port;
int addr;

int send_to(int addr, int port);
void log_port(int);

int send_to(int a, int p)
{
  addr = a;
  port = p;
  log_port(port);
  return addr;
}
